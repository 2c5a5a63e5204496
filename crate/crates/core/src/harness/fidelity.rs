use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::model::{pad, DifndModel};
use crate::nn::to_vec2;

/// Nearest-centroid agreement between sampled debunk latents and the label
/// clusters of compressed training debunk texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub accuracy: f64,
    pub n: usize,
    /// Ids whose sample landed in the wrong cluster.
    pub misses: Vec<String>,
    /// Nearest-centroid accuracy of the compressed training texts themselves.
    pub reference_accuracy: f64,
}

fn flat_mean(x: &candle_core::Tensor) -> Result<Vec<Vec<f64>>> {
    to_vec2(&x.flatten_from(1)?)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centroids come from every debunk text of the `train` items; samples are
/// raw DDIM outputs for the `eval` items, conditioned on their modalities.
pub fn fidelity(model: &DifndModel, table: &FeatureTable, train: &[String], eval: &[String]) -> Result<FidelityReport> {
    let d = model
        .diffusion
        .as_ref()
        .ok_or(Error::MissingFeature("debunk diffusion"))?;
    let policy = model.cfg.debunk_source;
    let input_dim = d.compressor.config().input_dim;
    let mut sums = [Vec::new(), Vec::new()];
    let mut counts = [0usize; 2];
    let mut compressed: Vec<(usize, Vec<f64>)> = Vec::new();
    for row in table.rows(train)? {
        let seqs: Vec<_> = row.debunks(policy).iter().map(Some).collect();
        if seqs.is_empty() {
            continue;
        }
        let p = pad(&seqs, input_dim)?;
        for z in flat_mean(&d.compressor.forward(&p.x, Some(&p.mask))?)? {
            let c = row.label.index();
            if sums[c].is_empty() {
                sums[c] = vec![0.0; z.len()];
            }
            sums[c].iter_mut().zip(&z).for_each(|(s, v)| *s += v);
            counts[c] += 1;
            compressed.push((c, z));
        }
    }
    if counts.contains(&0) {
        return Err(Error::InvalidSplit(
            "both labels need debunk texts in the training split".into(),
        ));
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(counts)
        .map(|(s, n)| s.iter().map(|v| v / n as f64).collect())
        .collect();
    let nearest = |z: &[f64]| usize::from(dist2(z, &centroids[1]) < dist2(z, &centroids[0]));
    let reference_accuracy =
        compressed.iter().filter(|(c, z)| nearest(z) == *c).count() as f64 / compressed.len() as f64;

    let rows = table.rows(eval)?;
    let mut misses = Vec::new();
    for chunk in rows.chunks(model.cfg.batch_size.max(1)) {
        let inputs = model.inputs(chunk)?;
        let samples = flat_mean(&model.sample_raw(&inputs)?)?;
        for (row, z) in chunk.iter().zip(samples) {
            if nearest(&z) != row.label.index() {
                misses.push(row.id.clone());
            }
        }
    }
    let n = rows.len();
    Ok(FidelityReport {
        accuracy: if n == 0 {
            0.0
        } else {
            1.0 - misses.len() as f64 / n as f64
        },
        n,
        misses,
        reference_accuracy,
    })
}
