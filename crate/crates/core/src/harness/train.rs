use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Module, TrainConfig};
use crate::corpus::SplitView;
use crate::error::{Error, Result};
use crate::features::{FeatureTable, ItemFeatures};
use crate::model::{argmax, DifndModel, DIFFUSION_PARAMS};
use crate::nn::{scalar, Adam};

use super::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean batch loss of the epoch's objective.
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DifndModel,
    pub history: Vec<EpochLog>,
    /// Joint epoch whose weights were kept; `None` when no joint epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub fingerprint: String,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.loss).collect()
    }
}

/// Two-phase training on the `train` ids of `view`: diffusion warm-up (only
/// when DD is enabled) followed by the joint objective. After every joint
/// epoch the model is scored on `val` and the best weights (strictly higher
/// accuracy, earliest wins) are restored at the end.
pub fn train(table: &FeatureTable, view: &SplitView, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rows = table.rows(&view.train)?;
    if rows.is_empty() {
        return Err(Error::InvalidSplit("training split is empty".into()));
    }
    let val = table.rows(&view.val)?;
    let model = DifndModel::new(cfg, table.dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let diffusion_vars = model.store.vars(&DIFFUSION_PARAMS);
    let all_vars = model.store.vars(&[]);
    let mut history = Vec::new();
    let mut epoch = 0;

    if cfg.has(Module::DebunkDiffusion) {
        for _ in 0..cfg.warmup_epochs {
            let mut sum = 0.0;
            let batches = epoch_batches(&rows, cfg, &mut rng);
            for (b, (chunk, picks)) in batches.iter().enumerate() {
                let batch = model.batch(chunk, picks)?;
                let loss = model.warmup_loss(&batch, &mut rng)?.total()?;
                sum += checked(&loss, epoch, b)?;
                adam.step(&diffusion_vars, &loss.backward()?)?;
            }
            history.push(EpochLog {
                epoch,
                phase: Phase::Warmup,
                loss: sum / batches.len() as f64,
                val_accuracy: None,
            });
            log::info!("epoch {epoch} warm-up loss {:.5}", sum / batches.len() as f64);
            epoch += 1;
        }
    }

    let mut best: Option<(usize, f64, crate::nn::Snapshot)> = None;
    for _ in 0..cfg.joint_epochs() {
        let mut sum = 0.0;
        let batches = epoch_batches(&rows, cfg, &mut rng);
        for (b, (chunk, picks)) in batches.iter().enumerate() {
            let batch = model.batch(chunk, picks)?;
            let (loss, _) = model.joint_loss(&batch, &mut rng)?;
            sum += checked(&loss.total, epoch, b)?;
            adam.step(&all_vars, &loss.total.backward()?)?;
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(evaluate_rows(&model, &val, cfg.batch_size)?.accuracy)
        };
        let keep = match (&best, val_accuracy) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((_, acc, _)), Some(v)) => v > *acc,
        };
        if keep {
            best = Some((epoch, val_accuracy.unwrap_or(f64::NAN), model.store.snapshot()?));
        }
        history.push(EpochLog {
            epoch,
            phase: Phase::Joint,
            loss: sum / batches.len() as f64,
            val_accuracy,
        });
        log::info!(
            "epoch {epoch} joint loss {:.5} val acc {}",
            sum / batches.len() as f64,
            val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        epoch += 1;
    }

    let (best_epoch, best_val_accuracy) = match best {
        Some((e, acc, snap)) => {
            model.store.restore(&snap)?;
            (Some(e), (!acc.is_nan()).then_some(acc))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_accuracy,
        fingerprint: cfg.fingerprint(),
    })
}

type EpochBatch<'a> = (Vec<&'a ItemFeatures>, Vec<Option<usize>>);

/// A seeded shuffle of the training rows cut into batches, with one debunk
/// text drawn per item.
fn epoch_batches<'a>(rows: &[&'a ItemFeatures], cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<EpochBatch<'a>> {
    let mut order: Vec<&ItemFeatures> = rows.to_vec();
    order.shuffle(rng);
    order
        .chunks(cfg.batch_size)
        .map(|chunk| {
            let picks = chunk
                .iter()
                .map(|r| {
                    let n = r.debunks(cfg.debunk_source).len();
                    (n > 0).then(|| rng.gen_range(0..n))
                })
                .collect();
            (chunk.to_vec(), picks)
        })
        .collect()
}

fn checked(loss: &Tensor, epoch: usize, batch: usize) -> Result<f64> {
    let v = scalar(loss)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { epoch, batch })
    }
}

/// Class predictions for `rows`, in order.
pub fn predict_rows(model: &DifndModel, rows: &[&ItemFeatures], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let inputs = model.inputs(chunk)?;
        out.extend(argmax(&model.predict(&inputs)?.y_fnd)?);
    }
    Ok(out)
}

pub fn evaluate_rows(model: &DifndModel, rows: &[&ItemFeatures], batch_size: usize) -> Result<EvalReport> {
    let predicted = predict_rows(model, rows, batch_size)?;
    let truth: Vec<usize> = rows.iter().map(|r| r.label.index()).collect();
    EvalReport::from_predictions(&truth, &predicted, model.cfg.fingerprint())
}

/// Metrics over the given ids (typically a test split).
pub fn evaluate(model: &DifndModel, table: &FeatureTable, ids: &[String]) -> Result<EvalReport> {
    let rows = table.rows(ids)?;
    if rows.is_empty() {
        return Err(Error::InvalidSplit("evaluation split is empty".into()));
    }
    evaluate_rows(model, &rows, model.cfg.batch_size)
}
