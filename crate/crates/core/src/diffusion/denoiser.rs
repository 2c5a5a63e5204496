use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{NoiseSchedule, ZeroPredictor};
use crate::error::{Error, Result};
use crate::nn::{device, sinusoidal, Attention, FeedForward, Init, LayerNorm, Linear, Scope, DTYPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondSegment {
    Text,
    Audio,
    Vision,
}

impl CondSegment {
    pub const ALL: [CondSegment; 3] = [CondSegment::Text, CondSegment::Audio, CondSegment::Vision];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Conditioning rows `[F_t; F_a; F_v]` after projection, positional encoding
/// and modality offsets.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub x_cond: Tensor,
    pub mask: Tensor,
    pub segments: Vec<CondSegment>,
}

impl ConditionBundle {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Projects each modality to the shared conditioning width.
#[derive(Debug, Clone)]
pub struct ConditionEncoder {
    proj: [Option<Linear>; 3],
    offsets: [Option<Tensor>; 3],
    dim: usize,
}

impl ConditionEncoder {
    pub fn new(scope: &Scope, inputs: &[(CondSegment, usize)], dim: usize) -> Result<Self> {
        let mut proj = [None, None, None];
        let mut offsets = [None, None, None];
        for &(seg, in_dim) in inputs {
            let name = format!("{seg:?}").to_lowercase();
            proj[seg.slot()] = Some(Linear::new(&scope.pp(&format!("proj_{name}")), in_dim, dim, true)?);
            offsets[seg.slot()] = Some(scope.get(&format!("offset_{name}"), &[dim], Init::Normal(0.02))?);
        }
        Ok(Self { proj, offsets, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `inputs` are `(segment, (batch, L_m, d_m) features, optional (batch, L_m) mask)`;
    /// rows are emitted in text, audio, vision order whatever the input order.
    pub fn encode(&self, inputs: &[(CondSegment, &Tensor, Option<&Tensor>)]) -> Result<ConditionBundle> {
        let mut sorted: Vec<_> = inputs.to_vec();
        sorted.sort_by_key(|(s, _, _)| *s);
        if sorted.is_empty() {
            return Err(Error::MissingFeature("condition"));
        }
        let mut rows = Vec::new();
        let mut masks = Vec::new();
        let mut segments = Vec::new();
        for (seg, feats, mask) in sorted {
            let (proj, offset) = match (&self.proj[seg.slot()], &self.offsets[seg.slot()]) {
                (Some(p), Some(o)) => (p, o),
                _ => {
                    return Err(Error::DimMismatch(format!("no condition projection for {seg:?}")));
                }
            };
            let (b, l, _) = feats.dims3()?;
            let pos: Vec<f64> = (0..l).map(|p| p as f64).collect();
            let pe = sinusoidal(&pos, self.dim)?.unsqueeze(0)?;
            rows.push(proj.forward(feats)?.broadcast_add(&pe)?.broadcast_add(offset)?);
            masks.push(match mask {
                Some(m) => m.clone(),
                None => Tensor::ones((b, l), DTYPE, &device())?,
            });
            segments.extend(std::iter::repeat_n(seg, l));
        }
        Ok(ConditionBundle {
            x_cond: Tensor::cat(&rows, 1)?,
            mask: Tensor::cat(&masks, 1)?,
            segments,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub time_embedding_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 64,
            time_embedding_dim: 32,
        }
    }
}

/// Pre-LayerNorm block: self-attention over latent rows, cross-attention into
/// the condition, feed-forward.
#[derive(Debug, Clone)]
pub struct DenoiserLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl DenoiserLayer {
    fn new(scope: &Scope, cfg: &DenoiserConfig, cond_dim: usize) -> Result<Self> {
        let m = cfg.model_dim;
        Ok(Self {
            ln_self: LayerNorm::new(&scope.pp("ln_self"), m)?,
            self_attn: Attention::new(&scope.pp("self_attn"), m, m, m, cfg.heads, true)?,
            ln_cross: LayerNorm::new(&scope.pp("ln_cross"), m)?,
            // No output map, so a zero value projection removes the condition exactly.
            cross: Attention::new(&scope.pp("cross_attn"), m, cond_dim, m, cfg.heads, false)?,
            ln_ff: LayerNorm::new(&scope.pp("ln_ff"), m)?,
            ff: FeedForward::new(&scope.pp("ff"), m, 2 * m, m)?,
        })
    }

    /// The residual conditioning term added to the latent stream `h`.
    pub fn cross_attention(&self, h: &Tensor, cond: &ConditionBundle) -> Result<Tensor> {
        self.cross
            .forward(&self.ln_cross.forward(h)?, &cond.x_cond, Some(&cond.mask))
    }

    pub fn forward(&self, h: &Tensor, cond: Option<&ConditionBundle>) -> Result<Tensor> {
        let x = self.ln_self.forward(h)?;
        let mut h = (h + self.self_attn.forward(&x, &x, None)?)?;
        if let Some(c) = cond {
            h = (&h + self.cross_attention(&h, c)?)?;
        }
        Ok((&h + self.ff.forward(&self.ln_ff.forward(&h)?)?)?)
    }
}

/// Transformer that predicts z0 from `(z_t, condition, t)`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    latent_dim: usize,
    in_proj: Linear,
    positions: Tensor,
    time_in: Linear,
    time_out: Linear,
    layers: Vec<DenoiserLayer>,
    ln_out: LayerNorm,
    out_proj: Linear,
}

impl Denoiser {
    pub fn new(
        scope: &Scope,
        cfg: DenoiserConfig,
        latents: usize,
        latent_dim: usize,
        cond_dim: usize,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(Error::Config("diffusion.layers must be at least 1".into()));
        }
        if cfg.heads == 0 || !cfg.model_dim.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "denoiser width {} not divisible by {} heads",
                cfg.model_dim, cfg.heads
            )));
        }
        let m = cfg.model_dim;
        let layers = (0..cfg.layers)
            .map(|i| DenoiserLayer::new(&scope.pp(&format!("layer{i}")), &cfg, cond_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            schedule,
            latent_dim,
            in_proj: Linear::new(&scope.pp("in_proj"), latent_dim, m, true)?,
            positions: scope.get("positions", &[latents, m], Init::Normal(0.02))?,
            time_in: Linear::new(&scope.pp("time_in"), cfg.time_embedding_dim, m, true)?,
            time_out: Linear::new(&scope.pp("time_out"), m, m, true)?,
            layers,
            ln_out: LayerNorm::new(&scope.pp("ln_out"), m)?,
            out_proj: Linear::new(&scope.pp("out_proj"), m, latent_dim, true)?,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[DenoiserLayer] {
        &self.layers
    }

    fn time_embedding(&self, t: &[f64]) -> Result<Tensor> {
        let pos: Vec<f64> = t.iter().map(|&v| 1000.0 * self.schedule.normalized(v)).collect();
        let feats = sinusoidal(&pos, self.cfg.time_embedding_dim)?;
        self.time_out.forward(&crate::nn::gelu(&self.time_in.forward(&feats)?)?)
    }
}

impl ZeroPredictor for Denoiser {
    fn predict(&self, z_t: &Tensor, cond: Option<&ConditionBundle>, t: &[f64]) -> Result<Tensor> {
        let (b, l, d) = z_t.dims3()?;
        if d != self.latent_dim || l != self.positions.dim(0)? || t.len() != b {
            return Err(Error::DimMismatch(format!(
                "denoiser expects ({}, {}, {}) latents with one time each, got ({b}, {l}, {d}) and {} times",
                b,
                self.positions.dim(0)?,
                self.latent_dim,
                t.len()
            )));
        }
        for &v in t {
            self.schedule.check(v)?;
        }
        let temb = self.time_embedding(t)?.unsqueeze(1)?;
        let mut h = self
            .in_proj
            .forward(z_t)?
            .broadcast_add(&self.positions)?
            .broadcast_add(&temb)?;
        for layer in &self.layers {
            h = layer.forward(&h, cond)?;
        }
        self.out_proj.forward(&self.ln_out.forward(&h)?)
    }
}

/// Residual cleanup `Ẑ = z̃ + FF(LN(z̃))`, starting as the identity.
#[derive(Debug, Clone)]
pub struct Refiner {
    ln: LayerNorm,
    ff: FeedForward,
}

impl Refiner {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            ln: LayerNorm::new(&scope.pp("ln"), dim)?,
            ff: FeedForward::zero_out(&scope.pp("ff"), dim, 2 * dim, dim)?,
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        Ok((z + self.ff.forward(&self.ln.forward(z)?)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddim_sample, initial_noise, mse_loss, reconstruction_loss, NoiseDraw};
    use crate::nn::{finite_difference_check, scalar, to_vec2, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(layers: usize) -> (ParamStore, ConditionEncoder, Denoiser) {
        let store = ParamStore::new(21);
        let cfg = DenoiserConfig {
            layers,
            heads: 2,
            model_dim: 8,
            time_embedding_dim: 8,
        };
        let enc = ConditionEncoder::new(
            &store.root().pp("diffusion/denoiser/cond"),
            &[
                (CondSegment::Text, 5),
                (CondSegment::Audio, 3),
                (CondSegment::Vision, 4),
            ],
            8,
        )
        .unwrap();
        let den = Denoiser::new(
            &store.root().pp("diffusion/denoiser"),
            cfg,
            3,
            6,
            8,
            NoiseSchedule::default(),
        )
        .unwrap();
        (store, enc, den)
    }

    fn cond(enc: &ConditionEncoder, b: usize) -> (Vec<Tensor>, ConditionBundle) {
        let dev = device();
        let t = Tensor::randn(0f64, 1.0, (b, 2, 5), &dev).unwrap();
        let a = Tensor::randn(0f64, 1.0, (b, 1, 3), &dev).unwrap();
        let v = Tensor::randn(0f64, 1.0, (b, 3, 4), &dev).unwrap();
        let bundle = enc
            .encode(&[
                (CondSegment::Vision, &v, None),
                (CondSegment::Text, &t, None),
                (CondSegment::Audio, &a, None),
            ])
            .unwrap();
        (vec![t, a, v], bundle)
    }

    fn zero(store: &ParamStore, prefix: &str) {
        for (_, v) in store.vars(&[prefix]) {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        scalar(&(a - b).unwrap().abs().unwrap().max_all().unwrap()).unwrap()
    }

    #[test]
    fn bundle_orders_rows_and_adds_offsets() {
        let (store, enc, _) = setup(1);
        let (raw, bundle) = cond(&enc, 1);
        assert_eq!(bundle.len(), 6);
        assert_eq!(
            bundle.segments,
            vec![
                CondSegment::Text,
                CondSegment::Text,
                CondSegment::Audio,
                CondSegment::Vision,
                CondSegment::Vision,
                CondSegment::Vision
            ]
        );
        // Audio row: projection + position 0 encoding + audio offset.
        let var = |n: &str| store.vars(&[n])[0].1.as_tensor().clone();
        let w = to_vec2(&var("diffusion/denoiser/cond/proj_audio/weight")).unwrap();
        let bias = var("diffusion/denoiser/cond/proj_audio/bias").to_vec1::<f64>().unwrap();
        let off = var("diffusion/denoiser/cond/offset_audio").to_vec1::<f64>().unwrap();
        let pe = to_vec2(&sinusoidal(&[0.0], 8).unwrap()).unwrap();
        let x = to_vec2(&raw[1].get(0).unwrap()).unwrap();
        let got = to_vec2(&bundle.x_cond.get(0).unwrap()).unwrap();
        for j in 0..8 {
            let p: f64 = (0..3).map(|k| w[j][k] * x[0][k]).sum::<f64>() + bias[j];
            assert!((got[2][j] - (p + pe[0][j] + off[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_value_projection_removes_conditioning() {
        let (store, enc, den) = setup(2);
        let (_, bundle) = cond(&enc, 2);
        let z = Tensor::randn(0f64, 1.0, (2, 3, 6), &device()).unwrap();
        let t = [0.3, 0.8];
        let with = den.predict(&z, Some(&bundle), &t).unwrap();
        let without = den.predict(&z, None, &t).unwrap();
        assert!(max_diff(&with, &without) > 1e-6);
        zero(&store, "diffusion/denoiser/layer0/cross_attn/v/");
        zero(&store, "diffusion/denoiser/layer1/cross_attn/v/");
        let with = den.predict(&z, Some(&bundle), &t).unwrap();
        assert_eq!(
            to_vec2(&with.get(1).unwrap()).unwrap(),
            to_vec2(&without.get(1).unwrap()).unwrap()
        );
    }

    #[test]
    fn condition_rows_change_the_prediction() {
        let (_, enc, den) = setup(1);
        let (raw, bundle) = cond(&enc, 1);
        let z = Tensor::randn(0f64, 1.0, (1, 3, 6), &device()).unwrap();
        let base = den.predict(&z, Some(&bundle), &[0.5]).unwrap();
        let a2 = (&raw[1] + 1.0).unwrap();
        let changed = enc
            .encode(&[
                (CondSegment::Text, &raw[0], None),
                (CondSegment::Audio, &a2, None),
                (CondSegment::Vision, &raw[2], None),
            ])
            .unwrap();
        let moved = den.predict(&z, Some(&changed), &[0.5]).unwrap();
        assert!(max_diff(&base, &moved) > 1e-8);
    }

    #[test]
    fn zeroed_query_key_averages_projected_condition_rows() {
        let (store, enc, den) = setup(1);
        zero(&store, "diffusion/denoiser/layer0/cross_attn/q/");
        zero(&store, "diffusion/denoiser/layer0/cross_attn/k/");
        // 2 text rows + 1 audio row: a 3-row condition; keep vision out.
        let t = Tensor::randn(0f64, 1.0, (1, 2, 5), &device()).unwrap();
        let a = Tensor::randn(0f64, 1.0, (1, 1, 3), &device()).unwrap();
        let bundle = enc
            .encode(&[(CondSegment::Text, &t, None), (CondSegment::Audio, &a, None)])
            .unwrap();
        let h = Tensor::randn(0f64, 1.0, (1, 3, 8), &device()).unwrap();
        let got = to_vec2(&den.layers()[0].cross_attention(&h, &bundle).unwrap().get(0).unwrap()).unwrap();

        let wv = to_vec2(
            &store.vars(&["diffusion/denoiser/layer0/cross_attn/v/"])[0]
                .1
                .as_tensor()
                .clone(),
        )
        .unwrap();
        let x = to_vec2(&bundle.x_cond.get(0).unwrap()).unwrap();
        let mut mean = [0.0; 8];
        for row in &x {
            for j in 0..8 {
                let p: f64 = (0..8).map(|k| wv[j][k] * row[k]).sum();
                mean[j] += p / x.len() as f64;
            }
        }
        for row in &got {
            for j in 0..8 {
                assert!((row[j] - mean[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prediction_shape_and_sampling_determinism() {
        let (_, enc, den) = setup(2);
        let (_, bundle) = cond(&enc, 2);
        let z = initial_noise(&[4, 5], 3, 6).unwrap();
        let out = ddim_sample(&den, Some(&bundle), &NoiseSchedule::default(), 4, &z).unwrap();
        assert_eq!(out.dims(), &[2, 3, 6]);
        let again = ddim_sample(
            &den,
            Some(&bundle),
            &NoiseSchedule::default(),
            4,
            &initial_noise(&[4, 5], 3, 6).unwrap(),
        )
        .unwrap();
        assert_eq!(
            to_vec2(&out.get(0).unwrap()).unwrap(),
            to_vec2(&again.get(0).unwrap()).unwrap()
        );
        let one = ddim_sample(&den, Some(&bundle), &NoiseSchedule::default(), 1, &z).unwrap();
        let direct = den.predict(&z, Some(&bundle), &[1.0, 1.0]).unwrap();
        assert_eq!(
            to_vec2(&one.get(1).unwrap()).unwrap(),
            to_vec2(&direct.get(1).unwrap()).unwrap()
        );
        assert!(den.predict(&z, Some(&bundle), &[1.0, 1.5]).is_err());
    }

    #[test]
    fn refiner_starts_as_identity() {
        let store = ParamStore::new(0);
        let r = Refiner::new(&store.root().pp("r"), 6).unwrap();
        let z = Tensor::randn(0f64, 1.0, (2, 3, 6), &device()).unwrap();
        let target = Tensor::randn(0f64, 1.0, (2, 3, 6), &device()).unwrap();
        let out = r.forward(&z).unwrap();
        assert_eq!(max_diff(&out, &z), 0.0);
        let rec = scalar(&reconstruction_loss(&out, &target, None).unwrap()).unwrap();
        let direct = scalar(&reconstruction_loss(&z, &target, None).unwrap()).unwrap();
        assert_eq!(rec, direct);
    }

    #[test]
    fn mse_replay_matches_independent_recomputation() {
        let (_, enc, den) = setup(1);
        let (_, bundle) = cond(&enc, 2);
        let s = NoiseSchedule::default();
        let z0 = Tensor::randn(0f64, 1.0, (2, 3, 6), &device()).unwrap();
        let draw = NoiseDraw::sample(&mut ChaCha8Rng::seed_from_u64(9), &s, 2, 3, 6).unwrap();
        let loss = scalar(
            &mse_loss(
                &den.predict(&draw.apply(&z0, &s).unwrap(), Some(&bundle), &draw.t)
                    .unwrap(),
                &z0,
                None,
            )
            .unwrap(),
        )
        .unwrap();

        let mut total = 0.0;
        for i in 0..2 {
            let g = s.gamma(draw.t[i]);
            let zt = ((z0.get(i).unwrap() * g.sqrt()).unwrap()
                + (draw.eps.get(i).unwrap() * (1.0 - g).sqrt()).unwrap())
            .unwrap();
            let one = ConditionBundle {
                x_cond: bundle.x_cond.narrow(0, i, 1).unwrap(),
                mask: bundle.mask.narrow(0, i, 1).unwrap(),
                segments: bundle.segments.clone(),
            };
            let pred = to_vec2(
                &den.predict(&zt.unsqueeze(0).unwrap(), Some(&one), &[draw.t[i]])
                    .unwrap()
                    .get(0)
                    .unwrap(),
            )
            .unwrap();
            let target = to_vec2(&z0.get(i).unwrap()).unwrap();
            for (p, q) in pred.iter().flatten().zip(target.iter().flatten()) {
                total += (p - q) * (p - q);
            }
        }
        assert!((loss - total / 36.0).abs() < 1e-12);
    }

    #[test]
    fn denoiser_gradients_match_finite_differences() {
        let (store, enc, den) = setup(1);
        let refiner = Refiner::new(&store.root().pp("diffusion/refiner"), 6).unwrap();
        // Move the refiner off its zero init so its gradients are exercised.
        for (_, v) in store.vars(&["diffusion/refiner/ff/down"]) {
            v.set(&(Tensor::randn(0f64, 0.1, v.dims(), &device()).unwrap()))
                .unwrap();
        }
        let dev = device();
        let t_in = Tensor::randn(0f64, 1.0, (2, 2, 5), &dev).unwrap();
        let a_in = Tensor::randn(0f64, 1.0, (2, 1, 3), &dev).unwrap();
        let z0 = Tensor::randn(0f64, 1.0, (2, 3, 6), &dev).unwrap();
        let s = NoiseSchedule::default();
        let draw = NoiseDraw::sample(&mut ChaCha8Rng::seed_from_u64(2), &s, 2, 3, 6).unwrap();
        let f = || -> Result<Tensor> {
            let c = enc.encode(&[(CondSegment::Text, &t_in, None), (CondSegment::Audio, &a_in, None)])?;
            let pred = den.predict(&draw.apply(&z0, &s)?, Some(&c), &draw.t)?;
            let refined = refiner.forward(&pred)?;
            Ok((mse_loss(&pred, &z0, None)? + reconstruction_loss(&refined, &z0, None)?)?)
        };
        let grads = f().unwrap().backward().unwrap();
        let vars: Vec<_> = store
            .vars(&["diffusion/"])
            .into_iter()
            .filter(|(n, _)| !n.contains("vision"))
            .collect();
        let report = finite_difference_check(&vars, &grads, || scalar(&f()?), 1e-5, 1e-6).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
