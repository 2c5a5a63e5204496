use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::SplitView;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

use super::ablate::{csv_err, run_cells, CellResult};

/// Values tried for each loss weight; the other two stay at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let g = vec![0.1, 0.5, 1.0, 1.5, 2.0];
        Self {
            alpha: g.clone(),
            beta: g.clone(),
            gamma: g,
        }
    }
}

impl SweepGrid {
    pub fn only(name: &str, values: Vec<f64>) -> Result<Self> {
        let mut g = SweepGrid {
            alpha: vec![],
            beta: vec![],
            gamma: vec![],
        };
        match name {
            "alpha" => g.alpha = values,
            "beta" => g.beta = values,
            "gamma" => g.gamma = values,
            other => return Err(Error::Config(format!("unknown sweep weight {other:?}"))),
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, values) in self.axes() {
            if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("sweep value {v} for {name} must be positive")));
            }
        }
        Ok(())
    }

    fn axes(&self) -> [(&'static str, &[f64]); 3] {
        [("alpha", &self.alpha), ("beta", &self.beta), ("gamma", &self.gamma)]
    }

    /// `(weight name, value, config)` per grid point, in axis order.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<(&'static str, f64, TrainConfig)>> {
        self.validate()?;
        let mut out = Vec::new();
        for (name, values) in self.axes() {
            for &v in values {
                let mut c = base.clone();
                c.loss.alpha = 1.0;
                c.loss.beta = 1.0;
                c.loss.gamma = 1.0;
                match name {
                    "alpha" => c.loss.alpha = v,
                    "beta" => c.loss.beta = v,
                    _ => c.loss.gamma = v,
                }
                out.push((name, v, c));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub weight: String,
    pub value: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(flatten)]
    pub result: CellResult,
}

pub fn sweep(
    table: &FeatureTable,
    view: &SplitView,
    base: &TrainConfig,
    grid: &SweepGrid,
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    let planned = grid.configs(base)?;
    let cfgs: Vec<TrainConfig> = planned.iter().map(|(_, _, c)| c.clone()).collect();
    let results = run_cells(table, view, &cfgs, threads)?;
    Ok(planned
        .into_iter()
        .zip(results)
        .map(|((name, value, c), result)| SweepPoint {
            weight: name.into(),
            value,
            alpha: c.loss.alpha,
            beta: c.loss.beta,
            gamma: c.loss.gamma,
            result,
        })
        .collect())
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "weight",
        "value",
        "alpha",
        "beta",
        "gamma",
        "accuracy",
        "f1",
        "fingerprint",
    ])
    .map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([
            p.weight.clone(),
            p.value.to_string(),
            p.alpha.to_string(),
            p.beta.to_string(),
            p.gamma.to_string(),
            format!("{:.6}", p.result.report.accuracy),
            format!("{:.6}", p.result.report.f1),
            p.result.fingerprint.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
