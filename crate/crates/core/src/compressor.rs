//! Latent compression of debunk text features: `ℓ` learned queries attend
//! over `[Q; F_d]` and a feed-forward pair maps the result to a fixed
//! `(ℓ, d)` latent block. Each latent row is standardized so the block sits
//! at the scale of the diffusion prior whatever the latent head pushes for.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, device, FeedForward, Init, Linear, Scope, DTYPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub latents: usize,
    pub dim: usize,
    pub input_dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self {
            latents: 16,
            dim: 64,
            input_dim: 128,
            heads: 4,
            ff_mult: 2,
        }
    }
}

impl CompressorConfig {
    /// `max_len` is the longest debunk sequence the compressor will see.
    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.latents == 0 || self.latents >= max_len {
            return Err(Error::Config(format!(
                "compressor.latents = {} must be in 1..{max_len}",
                self.latents
            )));
        }
        if self.dim == 0 || self.dim >= self.input_dim {
            return Err(Error::Config(format!(
                "compressor.dim = {} must be below the input width {}",
                self.dim, self.input_dim
            )));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "compressor.dim = {} not divisible by compressor.heads = {}",
                self.dim, self.heads
            )));
        }
        if self.ff_mult == 0 {
            return Err(Error::Config("compressor.ff_mult must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Compressed,
    Diffused,
    Refined,
}

/// One `(ℓ, d)` latent matrix with a note of where it came from.
#[derive(Debug, Clone)]
pub struct LatentBlock {
    pub z: Tensor,
    pub origin: Origin,
}

impl LatentBlock {
    pub fn new(z: Tensor, origin: Origin) -> Result<Self> {
        z.dims2()?;
        let v = z.flatten_all()?.to_vec1::<f64>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidFeature("latent block has non-finite entries".into()));
        }
        Ok(Self { z, origin })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.z.dims2().unwrap_or((0, 0))
    }

    /// Splits a `(batch, ℓ, d)` tensor into per-item blocks.
    pub fn unbatch(z: &Tensor, origin: Origin) -> Result<Vec<Self>> {
        let b = z.dim(0)?;
        (0..b).map(|i| Self::new(z.get(i)?, origin)).collect()
    }
}

const LATENT_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Compressor {
    cfg: CompressorConfig,
    queries: Tensor,
    q: Linear,
    k_latent: Linear,
    v_latent: Linear,
    k_input: Linear,
    v_input: Linear,
    out: Linear,
    ff_inner: FeedForward,
    ff_outer: FeedForward,
}

impl Compressor {
    pub fn new(scope: &Scope, cfg: CompressorConfig) -> Result<Self> {
        if cfg.heads == 0 || !cfg.dim.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "compressor.dim = {} not divisible by compressor.heads = {}",
                cfg.dim, cfg.heads
            )));
        }
        let d = cfg.dim;
        let a = scope.pp("attn");
        Ok(Self {
            cfg,
            queries: scope.get("queries", &[cfg.latents, d], Init::Normal(0.02))?,
            q: Linear::new(&a.pp("q"), d, d, false)?,
            k_latent: Linear::new(&a.pp("k_latent"), d, d, false)?,
            v_latent: Linear::new(&a.pp("v_latent"), d, d, false)?,
            k_input: Linear::new(&a.pp("k_input"), cfg.input_dim, d, false)?,
            v_input: Linear::new(&a.pp("v_input"), cfg.input_dim, d, false)?,
            out: Linear::new(&a.pp("o"), d, d, true)?,
            ff_inner: FeedForward::new(&scope.pp("ff_inner"), d, d * cfg.ff_mult, d)?,
            ff_outer: FeedForward::new(&scope.pp("ff_outer"), d, d * cfg.ff_mult, d)?,
        })
    }

    pub fn config(&self) -> &CompressorConfig {
        &self.cfg
    }

    /// `features` is `(batch, L, d_LE)` with an optional `(batch, L)` row mask;
    /// returns `(batch, ℓ, d)`.
    pub fn forward(&self, features: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, l, din) = features.dims3()?;
        if din != self.cfg.input_dim || l == 0 {
            return Err(Error::DimMismatch(format!(
                "compressor expects (*, L>=1, {}), got ({b}, {l}, {din})",
                self.cfg.input_dim
            )));
        }
        let lat = self
            .queries
            .unsqueeze(0)?
            .broadcast_as((b, self.cfg.latents, self.cfg.dim))?
            .contiguous()?;
        let q = self.q.forward(&lat)?;
        let k = Tensor::cat(&[self.k_latent.forward(&lat)?, self.k_input.forward(features)?], 1)?;
        let v = Tensor::cat(&[self.v_latent.forward(&lat)?, self.v_input.forward(features)?], 1)?;
        let mask = match mask {
            Some(m) => Some(Tensor::cat(
                &[Tensor::ones((b, self.cfg.latents), DTYPE, &device())?, m.clone()],
                1,
            )?),
            None => None,
        };
        let mha = self
            .out
            .forward(&nn::attend(&q, &k, &v, self.cfg.heads, mask.as_ref())?)?;
        let inner = self.ff_inner.forward(&lat)?;
        nn::standardize(&self.ff_outer.forward(&(inner + mha)?)?, LATENT_EPS)
    }

    pub fn compress(&self, features: &crate::encoders::FeatureSeq) -> Result<LatentBlock> {
        let x = Tensor::from_vec(
            features.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            (1, features.rows(), features.dim()),
            &device(),
        )?;
        LatentBlock::new(self.forward(&x, None)?.get(0)?.detach(), Origin::Compressed)
    }
}

/// Mean over the latent rows followed by a linear map to two logits.
#[derive(Debug, Clone)]
pub struct LatentHead {
    linear: Linear,
}

impl LatentHead {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(scope, dim, 2, true)?,
        })
    }

    /// `(batch, ℓ, d)` → `(batch, 2)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.linear.forward(&z.mean(D::Minus2)?)
    }

    pub fn classify(&self, block: &LatentBlock) -> Result<Vec<f64>> {
        Ok(self.forward(&block.z.unsqueeze(0)?)?.get(0)?.to_vec1::<f64>()?)
    }
}
