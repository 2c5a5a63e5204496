use crate::config::TrainConfig;
use crate::corpus::SplitPlan;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

use super::fidelity::fidelity;
use super::metrics::{Confusion, EvalReport};
use super::train::{evaluate, train, TrainOutcome};

/// One config trained once per view of a split plan.
#[derive(Debug)]
pub struct CrossValRun {
    pub outcomes: Vec<TrainOutcome>,
    /// Per-view train and test reports.
    pub train: Vec<EvalReport>,
    pub test: Vec<EvalReport>,
    /// Test confusions summed over views.
    pub pooled: EvalReport,
}

impl CrossValRun {
    pub fn mean_train_accuracy(&self) -> f64 {
        self.train.iter().map(|r| r.accuracy).sum::<f64>() / self.train.len().max(1) as f64
    }
}

pub fn cross_validate(table: &FeatureTable, plan: &SplitPlan, cfg: &TrainConfig) -> Result<CrossValRun> {
    let mut run = CrossValRun {
        outcomes: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
        pooled: EvalReport::from_confusion(Confusion::default(), cfg.fingerprint()),
    };
    let mut pooled = Confusion::default();
    for v in 0..plan.num_views() {
        let view = plan.view(v)?;
        let outcome = train(table, &view, cfg)?;
        run.train.push(evaluate(&outcome.model, table, &view.train)?);
        let test = evaluate(&outcome.model, table, &view.test)?;
        pooled = pooled.merge(&test.confusion);
        run.test.push(test);
        run.outcomes.push(outcome);
    }
    run.pooled = EvalReport::from_confusion(pooled, cfg.fingerprint());
    Ok(run)
}

/// Fidelity of every view's model on its own test ids, with centroids from its
/// own training ids, pooled over views. Returns `(accuracy, n)`.
pub fn pooled_fidelity(table: &FeatureTable, plan: &SplitPlan, run: &CrossValRun) -> Result<(f64, usize)> {
    if run.outcomes.len() != plan.num_views() {
        return Err(Error::InvalidSplit("run does not match the split plan".into()));
    }
    let (mut hits, mut n) = (0.0, 0);
    for (v, outcome) in run.outcomes.iter().enumerate() {
        let view = plan.view(v)?;
        let f = fidelity(&outcome.model, table, &view.train, &view.test)?;
        hits += f.accuracy * f.n as f64;
        n += f.n;
    }
    Ok((if n == 0 { 0.0 } else { hits / n as f64 }, n))
}
