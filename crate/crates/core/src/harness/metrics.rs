use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`, class 0 = REAL, 1 = FAKE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t > 1 || p > 1 {
                return Err(Error::DimMismatch(format!("class index out of range: {t}, {p}")));
            }
            c.counts[t][p] += 1;
        }
        Ok(c)
    }

    /// FAKE as the positive class: `(tp, fn, fp, tn)`.
    pub fn binary(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        Confusion {
            counts: [[tn, fp], [fn_, tp]],
        }
    }

    /// Element-wise sum, for pooling folds.
    pub fn merge(&self, other: &Confusion) -> Confusion {
        let mut c = *self;
        for t in 0..2 {
            for p in 0..2 {
                c.counts[t][p] += other.counts[t][p];
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / n as f64
    }

    pub fn class(&self, class: usize) -> ClassMetrics {
        let tp = self.counts[class][class] as f64;
        let actual: usize = self.counts[class].iter().sum();
        let predicted: usize = self.counts.iter().map(|row| row[class]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Accuracy plus macro-averaged F1, recall and precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub real: ClassMetrics,
    pub fake: ClassMetrics,
    pub confusion: Confusion,
    pub n: usize,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, fingerprint: impl Into<String>) -> Self {
        let real = confusion.class(Label::Real.index());
        let fake = confusion.class(Label::Fake.index());
        EvalReport {
            accuracy: confusion.accuracy(),
            f1: (real.f1 + fake.f1) / 2.0,
            recall: (real.recall + fake.recall) / 2.0,
            precision: (real.precision + fake.precision) / 2.0,
            real,
            fake,
            confusion,
            n: confusion.total(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], fingerprint: impl Into<String>) -> Result<Self> {
        Ok(Self::from_confusion(
            Confusion::from_predictions(truth, predicted)?,
            fingerprint,
        ))
    }

    /// Recomputes every metric from the stored confusion counts.
    pub fn cross_check(&self, tol: f64) -> Result<()> {
        let again = EvalReport::from_confusion(self.confusion, self.fingerprint.clone());
        let pairs = [
            ("accuracy", self.accuracy, again.accuracy),
            ("f1", self.f1, again.f1),
            ("recall", self.recall, again.recall),
            ("precision", self.precision, again.precision),
        ];
        for (name, a, b) in pairs {
            if (a - b).abs() > tol {
                return Err(Error::Config(format!(
                    "{name} {a} disagrees with confusion counts ({b})"
                )));
            }
        }
        if self.n != self.confusion.total() {
            return Err(Error::Config("sample count disagrees with confusion counts".into()));
        }
        Ok(())
    }
}
