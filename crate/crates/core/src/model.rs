//! The assembled detector: compression and conditional diffusion of debunk
//! latents, textual-debunk and multimodal fusion branches, and the two
//! training objectives (diffusion warm-up and the joint weighted loss).

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compressor::{Compressor, CompressorConfig, LatentHead};
use crate::config::{DenoisedLoss, InputModality, Module, TrainConfig};
use crate::diffusion::{
    ddim_sample, initial_noise, mse_loss, reconstruction_loss, CondSegment, ConditionBundle, ConditionEncoder,
    Denoiser, DenoiserConfig, DiffusionLosses, NoiseDraw, NoiseSchedule, Refiner, ZeroPredictor,
};
use crate::encoders::FeatureSeq;
use crate::error::{Error, Result};
use crate::features::{FeatureDims, ItemFeatures};
use crate::fusion::{total_loss, verdict_fuse, Evidence, MmFusion, Pair, Source, TdFusion, TotalLoss};
use crate::nn::{cross_entropy, device, one_hot, ParamStore, Scope, DTYPE};

/// Checkpoint entries, one parameter file each.
pub const CHECKPOINT_GROUPS: [&str; 6] = [
    "compressor",
    "diffusion/denoiser",
    "diffusion/refiner",
    "fusion/td",
    "fusion/mm",
    "fusion/heads",
];

/// Parameters trained by the diffusion objective.
pub const DIFFUSION_PARAMS: [&str; 3] = ["compressor/", "diffusion/", "fusion/heads/latent/"];

/// Parameters of the two fusion branches.
pub const FUSION_PARAMS: [&str; 2] = ["fusion/td/", "fusion/mm/"];

/// A zero-padded `(batch, L, dim)` tensor with its `(batch, L)` row mask.
#[derive(Debug, Clone)]
pub struct Padded {
    pub x: Tensor,
    pub mask: Tensor,
}

/// Pads to the longest sequence; `None` entries become a single masked row.
pub fn pad(seqs: &[Option<&FeatureSeq>], dim: usize) -> Result<Padded> {
    let b = seqs.len();
    let len = seqs.iter().map(|s| s.map_or(1, |s| s.rows())).max().unwrap_or(1);
    let mut x = vec![0.0f64; b * len * dim];
    let mut mask = vec![0.0f64; b * len];
    for (i, s) in seqs.iter().enumerate() {
        let Some(s) = s else { continue };
        if s.dim() != dim {
            return Err(Error::DimMismatch(format!(
                "{} features of width {} where {dim} was configured",
                s.modality,
                s.dim()
            )));
        }
        for r in 0..s.rows() {
            mask[i * len + r] = 1.0;
            let off = (i * len + r) * dim;
            for (dst, &v) in x[off..off + dim].iter_mut().zip(s.row(r)) {
                *dst = v as f64;
            }
        }
    }
    Ok(Padded {
        x: Tensor::from_vec(x, (b, len, dim), &device())?,
        mask: Tensor::from_vec(mask, (b, len), &device())?,
    })
}

/// Everything the detector reads at inference. Debunk texts are deliberately
/// absent: predictions cannot depend on them.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub ids: Vec<String>,
    pub text: Padded,
    pub text_audio: Option<Padded>,
    pub audio: Option<Padded>,
    pub text_vision: Option<Padded>,
    pub vision: Option<Padded>,
    pub cod: Option<Padded>,
    /// One DDIM starting-noise seed per item.
    pub noise_seeds: Vec<u64>,
}

impl Inputs {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A training batch: inputs, labels and the selected debunk text per item.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
    pub targets: Tensor,
    pub debunk: Option<Padded>,
    /// 1 for items that have a debunk text, 0 otherwise.
    pub has_debunk: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Scores {
    pub y_fnd: Tensor,
    pub y_mm: Option<Tensor>,
    pub y_td: Option<Tensor>,
}

/// Per-item DDIM seed derived from the run seed and the item id.
pub fn noise_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"ddim");
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone)]
pub struct DiffusionBranch {
    pub compressor: Compressor,
    pub head: LatentHead,
    pub cond: ConditionEncoder,
    pub denoiser: Denoiser,
    pub refiner: Refiner,
    pub schedule: NoiseSchedule,
}

/// Schedule entry of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub kind: crate::diffusion::ScheduleKind,
    pub horizon: f64,
}

#[derive(Debug, Clone)]
pub struct DifndModel {
    pub store: ParamStore,
    pub cfg: TrainConfig,
    pub dims: FeatureDims,
    pub diffusion: Option<DiffusionBranch>,
    pub td: Option<TdFusion>,
    pub mm: Option<MmFusion>,
}

fn need(dim: Option<usize>, what: &'static str) -> Result<usize> {
    dim.ok_or(Error::MissingFeature(what))
}

fn pair<'a>(text: &'a Option<Padded>, other: &'a Option<Padded>) -> Option<Pair<'a>> {
    match (text, other) {
        (Some(t), Some(o)) => Some(Pair {
            text: &t.x,
            text_mask: Some(&t.mask),
            other: &o.x,
            other_mask: Some(&o.mask),
        }),
        _ => None,
    }
}

fn scope(root: &Scope, path: &str) -> Scope {
    path.split('/').fold(root.clone(), |s, p| s.pp(p))
}

impl DifndModel {
    pub fn new(cfg: &TrainConfig, dims: FeatureDims) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(cfg.seed);
        let root = store.root();
        let vision = cfg.uses(InputModality::Vision);
        let audio = cfg.uses(InputModality::Audio);

        let diffusion = if cfg.has(Module::DebunkDiffusion) {
            let input_dim = need(dims.debunk, "debunk text features")?;
            let ccfg = CompressorConfig {
                latents: cfg.compressor.latents,
                dim: cfg.compressor.dim,
                input_dim,
                heads: cfg.compressor.heads,
                ff_mult: cfg.compressor.ff_mult,
            };
            if let Some(max_len) = dims.debunk_max_len {
                ccfg.validate(max_len)?;
            }
            let d = ccfg.dim;
            let dcfg = DenoiserConfig {
                layers: cfg.diffusion.layers,
                heads: cfg.diffusion.heads,
                model_dim: cfg.diffusion.model_dim.unwrap_or(d),
                time_embedding_dim: cfg.diffusion.time_embedding_dim,
            };
            let schedule = NoiseSchedule::new(cfg.diffusion.schedule, cfg.diffusion.horizon)?;
            let mut segments = vec![(CondSegment::Text, dims.text)];
            if audio {
                segments.push((CondSegment::Audio, need(dims.audio, "audio features")?));
            }
            if vision {
                segments.push((CondSegment::Vision, need(dims.vision, "vision features")?));
            }
            let den_scope = scope(&root, "diffusion/denoiser");
            Some(DiffusionBranch {
                compressor: Compressor::new(&root.pp("compressor"), ccfg)?,
                head: LatentHead::new(&scope(&root, "fusion/heads/latent"), d)?,
                cond: ConditionEncoder::new(&den_scope.pp("cond"), &segments, dcfg.model_dim)?,
                denoiser: Denoiser::new(&den_scope, dcfg, ccfg.latents, d, dcfg.model_dim, schedule)?,
                refiner: Refiner::new(&scope(&root, "diffusion/refiner"), d)?,
                schedule,
            })
        } else {
            None
        };

        let td = if cfg.has(Module::DebunkDiffusion) || cfg.has(Module::ChainOfDebunk) {
            let mut sources = Vec::new();
            if let Some(b) = &diffusion {
                sources.push((Evidence::Debunk, b.compressor.config().dim));
            }
            if cfg.has(Module::ChainOfDebunk) {
                sources.push((Evidence::Cod, need(dims.cod, "chain-of-debunk features")?));
            }
            Some(TdFusion::new(
                &scope(&root, "fusion/td"),
                dims.text,
                cfg.fusion.hidden,
                cfg.fusion.heads,
                &sources,
            )?)
        } else {
            None
        };

        let mm = if cfg.has(Module::MmFusion) {
            let a = if audio {
                Some((
                    need(dims.text_audio, "text-audio features")?,
                    need(dims.audio, "audio features")?,
                ))
            } else {
                None
            };
            let v = if vision {
                Some((
                    need(dims.text_vision, "text-vision features")?,
                    need(dims.vision, "vision features")?,
                ))
            } else {
                None
            };
            Some(MmFusion::new(
                &scope(&root, "fusion/mm"),
                a,
                v,
                cfg.fusion.hidden,
                cfg.fusion.heads,
            )?)
        } else {
            None
        };

        Ok(Self {
            store,
            cfg: cfg.clone(),
            dims,
            diffusion,
            td,
            mm,
        })
    }

    pub fn schedule_entry(&self) -> Option<ScheduleEntry> {
        self.diffusion.as_ref().map(|d| ScheduleEntry {
            kind: d.schedule.kind,
            horizon: d.schedule.horizon,
        })
    }

    /// Assembles the inference inputs of `rows`.
    pub fn inputs(&self, rows: &[&ItemFeatures]) -> Result<Inputs> {
        let dims = &self.dims;
        let vision = self.cfg.uses(InputModality::Vision);
        let audio = self.cfg.uses(InputModality::Audio);
        let required = |get: fn(&ItemFeatures) -> Option<&FeatureSeq>, dim: Option<usize>, what: &'static str| {
            let dim = need(dim, what)?;
            let seqs = rows
                .iter()
                .map(|r| get(r).ok_or(Error::MissingFeature(what)).map(Some))
                .collect::<Result<Vec<_>>>()?;
            pad(&seqs, dim)
        };
        let text = pad(&rows.iter().map(|r| Some(&r.text)).collect::<Vec<_>>(), dims.text)?;
        let mm = self.mm.is_some();
        let dd = self.diffusion.is_some();
        let text_audio = if mm && audio {
            Some(required(
                |r| r.text_audio.as_ref(),
                dims.text_audio,
                "text-audio features",
            )?)
        } else {
            None
        };
        let text_vision = if mm && vision {
            Some(required(
                |r| r.text_vision.as_ref(),
                dims.text_vision,
                "text-vision features",
            )?)
        } else {
            None
        };
        let audio_p = if (mm || dd) && audio {
            Some(required(|r| r.audio.as_ref(), dims.audio, "audio features")?)
        } else {
            None
        };
        let vision_p = if (mm || dd) && vision {
            Some(required(|r| r.vision.as_ref(), dims.vision, "vision features")?)
        } else {
            None
        };
        let cod = if self.cfg.has(Module::ChainOfDebunk) {
            let key = self.cfg.cod_variant();
            let dim = need(dims.cod, "chain-of-debunk features")?;
            let seqs = rows
                .iter()
                .map(|r| {
                    r.cod
                        .get(&key)
                        .ok_or(Error::MissingFeature("chain-of-debunk features"))
                        .map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(pad(&seqs, dim)?)
        } else {
            None
        };
        Ok(Inputs {
            ids: rows.iter().map(|r| r.id.clone()).collect(),
            text,
            text_audio,
            audio: audio_p,
            text_vision,
            vision: vision_p,
            cod,
            noise_seeds: rows.iter().map(|r| noise_seed(self.cfg.seed, &r.id)).collect(),
        })
    }

    /// A training batch; `debunk_pick[i]` selects one debunk text of item `i`
    /// under the configured debunk source.
    pub fn batch(&self, rows: &[&ItemFeatures], debunk_pick: &[Option<usize>]) -> Result<Batch> {
        let inputs = self.inputs(rows)?;
        let labels: Vec<usize> = rows.iter().map(|r| r.label.index()).collect();
        let targets = one_hot(&labels, 2)?;
        let (debunk, has_debunk) = if let Some(d) = &self.diffusion {
            let policy = self.cfg.debunk_source;
            let seqs: Vec<Option<&FeatureSeq>> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    debunk_pick
                        .get(i)
                        .copied()
                        .flatten()
                        .and_then(|k| r.debunks(policy).get(k))
                })
                .collect();
            let w: Vec<f64> = seqs.iter().map(|s| s.is_some() as u8 as f64).collect();
            (
                Some(pad(&seqs, d.compressor.config().input_dim)?),
                Some(Tensor::from_vec(w, rows.len(), &device())?),
            )
        } else {
            (None, None)
        };
        Ok(Batch {
            inputs,
            labels,
            targets,
            debunk,
            has_debunk,
        })
    }

    pub fn condition(&self, inputs: &Inputs) -> Result<ConditionBundle> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let mut parts: Vec<(CondSegment, &Tensor, Option<&Tensor>)> =
            vec![(CondSegment::Text, &inputs.text.x, Some(&inputs.text.mask))];
        if let Some(a) = &inputs.audio {
            parts.push((CondSegment::Audio, &a.x, Some(&a.mask)));
        }
        if let Some(v) = &inputs.vision {
            parts.push((CondSegment::Vision, &v.x, Some(&v.mask)));
        }
        d.cond.encode(&parts)
    }

    /// `F̂_d`: DDIM from per-item seeded noise, then refinement. Detached.
    pub fn sample_debunk(&self, inputs: &Inputs, cond: &ConditionBundle, steps: usize) -> Result<Tensor> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let c = d.compressor.config();
        let z_t = initial_noise(&inputs.noise_seeds, c.latents, c.dim)?;
        let cond = ConditionBundle {
            x_cond: cond.x_cond.detach(),
            mask: cond.mask.clone(),
            segments: cond.segments.clone(),
        };
        let z = ddim_sample(&d.denoiser, Some(&cond), &d.schedule, steps, &z_t)?;
        Ok(d.refiner.forward(&z)?.detach())
    }

    /// Raw DDIM latents before refinement, for diagnostics.
    pub fn sample_raw(&self, inputs: &Inputs) -> Result<Tensor> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let c = d.compressor.config();
        let cond = self.condition(inputs)?;
        let z_t = initial_noise(&inputs.noise_seeds, c.latents, c.dim)?;
        ddim_sample(&d.denoiser, Some(&cond), &d.schedule, self.cfg.diffusion.steps, &z_t)
    }

    fn branch_scores(&self, inputs: &Inputs, f_hat: Option<&Tensor>) -> Result<Scores> {
        let y_td = match &self.td {
            Some(td) => {
                let debunk = f_hat.map(|f| Source {
                    features: f,
                    mask: None,
                });
                let cod = inputs.cod.as_ref().map(|c| Source {
                    features: &c.x,
                    mask: Some(&c.mask),
                });
                Some(td.forward(&inputs.text.x, Some(&inputs.text.mask), debunk, cod)?.logits)
            }
            None => None,
        };
        let y_mm = match &self.mm {
            Some(mm) => Some(
                mm.forward(
                    pair(&inputs.text_audio, &inputs.audio),
                    pair(&inputs.text_vision, &inputs.vision),
                )?
                .logits,
            ),
            None => None,
        };
        let y_fnd = match (&y_mm, &y_td) {
            (Some(m), Some(t)) => verdict_fuse(m, t)?,
            (Some(m), None) => m.clone(),
            (None, Some(t)) => t.clone(),
            (None, None) => return Err(Error::Config("no classification branch enabled".into())),
        };
        Ok(Scores { y_fnd, y_mm, y_td })
    }

    /// Inference scores. Reads no debunk text.
    pub fn predict(&self, inputs: &Inputs) -> Result<Scores> {
        let f_hat = match &self.diffusion {
            Some(_) => {
                let cond = self.condition(inputs)?;
                Some(self.sample_debunk(inputs, &cond, self.cfg.diffusion.steps)?)
            }
            None => None,
        };
        self.branch_scores(inputs, f_hat.as_ref())
    }

    /// `L_mse + L_rec + L_d + L̂_d` for one batch with fresh noise from `rng`.
    /// The compressed latent is a constant target for the denoiser and the
    /// refiner; the compressor learns from `L_d` only.
    pub fn diffusion_losses(
        &self,
        batch: &Batch,
        cond: &ConditionBundle,
        rng: &mut impl Rng,
    ) -> Result<DiffusionLosses> {
        let z0 = self.compress(batch)?;
        let target = z0.detach();
        let (b, l, dim) = target.dims3()?;
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let draw = NoiseDraw::sample(rng, &d.schedule, b, l, dim)?;
        self.diffusion_losses_from(batch, cond, &z0, &target, &draw)
    }

    /// `(batch, ℓ, d)` latents of the selected debunk texts.
    pub fn compress(&self, batch: &Batch) -> Result<Tensor> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let debunk = batch
            .debunk
            .as_ref()
            .ok_or(Error::MissingFeature("debunk text features"))?;
        d.compressor.forward(&debunk.x, Some(&debunk.mask))
    }

    /// The diffusion losses for given latents `z0`, denoising target and noise.
    pub fn diffusion_losses_from(
        &self,
        batch: &Batch,
        cond: &ConditionBundle,
        z0: &Tensor,
        target: &Tensor,
        draw: &NoiseDraw,
    ) -> Result<DiffusionLosses> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or(Error::MissingFeature("debunk diffusion"))?;
        let w = batch.has_debunk.as_ref();
        let latent = cross_entropy(&d.head.forward(z0)?, &batch.targets, w)?;
        let pred = d
            .denoiser
            .predict(&draw.apply(target, &d.schedule)?, Some(cond), &draw.t)?;
        let mse = mse_loss(&pred, target, w)?;
        let refined = d.refiner.forward(&pred)?;
        let rec = reconstruction_loss(&refined, target, w)?;
        let denoised_in = match self.cfg.diffusion.denoised_loss {
            DenoisedLoss::Refined => &refined,
            DenoisedLoss::Raw => &pred,
        };
        let denoised = cross_entropy(&d.head.forward(denoised_in)?, &batch.targets, w)?;
        Ok(DiffusionLosses {
            mse,
            rec,
            latent,
            denoised,
        })
    }

    /// Warm-up objective: the diffusion losses alone.
    pub fn warmup_loss(&self, batch: &Batch, rng: &mut impl Rng) -> Result<DiffusionLosses> {
        let cond = self.condition(&batch.inputs)?;
        self.diffusion_losses(batch, &cond, rng)
    }

    /// Joint objective `L_FND + α·L_mm + β·L_td + γ·L_diff`. `F̂_d` is sampled
    /// with the training step count and enters as a constant.
    pub fn joint_loss(&self, batch: &Batch, rng: &mut impl Rng) -> Result<(TotalLoss, Scores)> {
        let f_hat = match &self.diffusion {
            Some(_) => {
                let cond = self.condition(&batch.inputs)?;
                Some(self.sample_debunk(&batch.inputs, &cond, self.cfg.train_steps())?)
            }
            None => None,
        };
        self.joint_loss_given(batch, f_hat.as_ref(), rng)
    }

    /// [`Self::joint_loss`] with a given debunk feature. With one branch only,
    /// its score is `y_fnd` and its auxiliary term is dropped.
    pub fn joint_loss_given(
        &self,
        batch: &Batch,
        f_hat: Option<&Tensor>,
        rng: &mut impl Rng,
    ) -> Result<(TotalLoss, Scores)> {
        let l_diff = match &self.diffusion {
            Some(_) if self.cfg.loss.gamma != 0.0 => {
                let cond = self.condition(&batch.inputs)?;
                Some(self.diffusion_losses(batch, &cond, rng)?.total()?)
            }
            _ => None,
        };
        self.combine(batch, f_hat, l_diff)
    }

    /// Scores and the weighted objective for a given `F̂_d` and `L_diff`.
    pub fn combine(
        &self,
        batch: &Batch,
        f_hat: Option<&Tensor>,
        l_diff: Option<Tensor>,
    ) -> Result<(TotalLoss, Scores)> {
        let scores = self.branch_scores(&batch.inputs, f_hat)?;
        let both = scores.y_mm.is_some() && scores.y_td.is_some();
        let loss = total_loss(
            &scores.y_fnd,
            if both { scores.y_mm.as_ref() } else { None },
            if both { scores.y_td.as_ref() } else { None },
            &batch.targets,
            l_diff,
            &self.cfg.loss,
        )?;
        Ok((loss, scores))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars(&[])
    }
}

/// `(batch, 2)` scores to class indices, ties to REAL.
pub fn argmax(scores: &Tensor) -> Result<Vec<usize>> {
    let v = scores.to_dtype(DTYPE)?.to_vec2::<f64>()?;
    Ok(v.iter().map(|r| usize::from(r[1] > r[0])).collect())
}
