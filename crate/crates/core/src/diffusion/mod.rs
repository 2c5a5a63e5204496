//! Conditional latent diffusion over compressed debunk latents: noise
//! schedule, forward corruption, z0-predicting denoiser, deterministic DDIM
//! sampling, self-refinement and the diffusion losses.

mod denoiser;

pub use denoiser::{CondSegment, ConditionBundle, ConditionEncoder, Denoiser, DenoiserConfig, DenoiserLayer, Refiner};

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{device, DTYPE};

/// Smallest noise scale `√(1−γ)` the sampler will divide by.
pub const MIN_NOISE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown diffusion.schedule {other:?}"))),
        }
    }
}

/// Signal-retention schedule `γ(t)` on `[0, T]`, falling from 1 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub horizon: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            horizon: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "diffusion horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { kind, horizon })
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(())
    }

    /// `t / T` in `[0, 1]`.
    pub fn normalized(&self, t: f64) -> f64 {
        t / self.horizon
    }

    pub fn gamma(&self, t: f64) -> f64 {
        let s = self.normalized(t).clamp(0.0, 1.0);
        match self.kind {
            ScheduleKind::Cosine => (s * std::f64::consts::FRAC_PI_2).cos().powi(2),
            ScheduleKind::Linear => 1.0 - s,
        }
    }

    /// Uniform grid `T·i/steps` for `i = steps, …, 0`.
    pub fn grid(&self, steps: usize) -> Vec<f64> {
        (0..=steps)
            .rev()
            .map(|i| self.horizon * i as f64 / steps as f64)
            .collect()
    }
}

/// `√γ(t)·z0 + √(1−γ(t))·ε` for one latent.
pub fn forward_noise(z0: &Tensor, t: f64, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check(t)?;
    if z0.dims() != eps.dims() {
        return Err(Error::DimMismatch(format!(
            "z0 {:?} vs noise {:?}",
            z0.dims(),
            eps.dims()
        )));
    }
    let g = schedule.gamma(t);
    Ok(((z0 * g.sqrt())? + (eps * (1.0 - g).sqrt())?)?)
}

/// Times and noise drawn for one training batch, kept so a loss can be
/// replayed with exactly the same randomness.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: Vec<f64>,
    pub eps: Tensor,
}

impl NoiseDraw {
    pub fn sample(
        rng: &mut impl Rng,
        schedule: &NoiseSchedule,
        batch: usize,
        latents: usize,
        dim: usize,
    ) -> Result<Self> {
        let t = (0..batch).map(|_| rng.gen_range(0.0..=schedule.horizon)).collect();
        let eps: Vec<f64> = (0..batch * latents * dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            t,
            eps: Tensor::from_vec(eps, (batch, latents, dim), &device())?,
        })
    }

    /// Batched forward process for `(batch, ℓ, d)` latents.
    pub fn apply(&self, z0: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
        let b = z0.dim(0)?;
        if self.t.len() != b || self.eps.dims() != z0.dims() {
            return Err(Error::DimMismatch("noise draw does not match latent batch".into()));
        }
        let mut sig = Vec::with_capacity(b);
        let mut noise = Vec::with_capacity(b);
        for &t in &self.t {
            schedule.check(t)?;
            let g = schedule.gamma(t);
            sig.push(g.sqrt());
            noise.push((1.0 - g).sqrt());
        }
        let sig = Tensor::from_vec(sig, (b, 1, 1), &device())?;
        let noise = Tensor::from_vec(noise, (b, 1, 1), &device())?;
        Ok((z0.broadcast_mul(&sig)? + self.eps.broadcast_mul(&noise)?)?)
    }
}

/// Anything that maps `(z_t, condition, t)` to a z0 estimate.
pub trait ZeroPredictor {
    fn predict(&self, z_t: &Tensor, cond: Option<&ConditionBundle>, t: &[f64]) -> Result<Tensor>;
}

/// Standard-normal starting latents, one independent stream per seed.
pub fn initial_noise(seeds: &[u64], latents: usize, dim: usize) -> Result<Tensor> {
    let mut v = Vec::with_capacity(seeds.len() * latents * dim);
    for &s in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        v.extend((0..latents * dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    Ok(Tensor::from_vec(v, (seeds.len(), latents, dim), &device())?)
}

/// Deterministic (η = 0) DDIM from `z_T` down to a z0 estimate on a uniform
/// grid of `steps` transitions.
pub fn ddim_sample<P: ZeroPredictor + ?Sized>(
    predictor: &P,
    cond: Option<&ConditionBundle>,
    schedule: &NoiseSchedule,
    steps: usize,
    z_t: &Tensor,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Config("diffusion.steps must be at least 1".into()));
    }
    let b = z_t.dim(0)?;
    let grid = schedule.grid(steps);
    let mut z = z_t.clone();
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let z0 = predictor.predict(&z, cond, &vec![t; b])?.detach();
        if next <= 0.0 {
            return Ok(z0);
        }
        z = ddim_step(&z, &z0, t, next, schedule)?;
    }
    Ok(z)
}

/// One η = 0 transition from `t` to `next` given the z0 estimate.
pub fn ddim_step(z: &Tensor, z0: &Tensor, t: f64, next: f64, schedule: &NoiseSchedule) -> Result<Tensor> {
    let g = schedule.gamma(t);
    let scale = (1.0 - g).sqrt();
    if scale < MIN_NOISE_SCALE {
        return Err(Error::ScheduleUnderflow { t, value: scale });
    }
    let eps = ((z - (z0 * g.sqrt())?)? / scale)?;
    let gn = schedule.gamma(next);
    Ok(((z0 * gn.sqrt())? + (eps * (1.0 - gn).sqrt())?)?)
}

fn row_weights(weights: Option<&Tensor>, b: usize) -> Result<(Tensor, f64)> {
    let w = match weights {
        Some(w) => w.clone(),
        None => Tensor::ones(b, DTYPE, &device())?,
    };
    let n = w.sum_all()?.to_scalar::<f64>()?;
    Ok((w, n.max(1.0)))
}

/// Mean squared error over the entries of the selected items.
pub fn mse_loss(pred: &Tensor, z0: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    let (b, l, d) = pred.dims3()?;
    let per_item = (pred - z0)?.sqr()?.sum((1, 2))?;
    let (w, n) = row_weights(weights, b)?;
    Ok(((per_item * w)?.sum_all()? / (n * (l * d) as f64))?)
}

/// Squared Frobenius distance per item, averaged over the selected items.
pub fn reconstruction_loss(refined: &Tensor, z: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    let b = refined.dim(0)?;
    let per_item = (refined - z)?.sqr()?.sum((1, 2))?;
    let (w, n) = row_weights(weights, b)?;
    Ok(((per_item * w)?.sum_all()? / n)?)
}

/// The four diffusion-side loss terms of one batch.
#[derive(Debug, Clone)]
pub struct DiffusionLosses {
    pub mse: Tensor,
    pub rec: Tensor,
    pub latent: Tensor,
    pub denoised: Tensor,
}

impl DiffusionLosses {
    /// Unweighted sum `L_mse + L_rec + L_d + L̂_d`.
    pub fn total(&self) -> Result<Tensor> {
        Ok((((&self.mse + &self.rec)? + &self.latent)? + &self.denoised)?)
    }

    pub fn values(&self) -> Result<[f64; 4]> {
        Ok([
            self.mse.to_scalar::<f64>()?,
            self.rec.to_scalar::<f64>()?,
            self.latent.to_scalar::<f64>()?,
            self.denoised.to_scalar::<f64>()?,
        ])
    }
}
