//! Fusion heads: textual-debunk fusion with gated external evidence,
//! multimodal cross-attention fusion, the late verdict product and the
//! weighted training objective.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, masked_mean, Attention, LayerNorm, Linear, Scope};

/// External evidence sources the TD branch can mix in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    Debunk,
    Cod,
}

impl Evidence {
    fn name(self) -> &'static str {
        match self {
            Evidence::Debunk => "debunk",
            Evidence::Cod => "cod",
        }
    }
}

/// Sigmoid gate between the pooled text and one pooled external source.
#[derive(Debug, Clone)]
pub struct Gate {
    proj: Linear,
    gate: Linear,
}

impl Gate {
    fn new(scope: &Scope, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&scope.pp("proj"), in_dim, hidden, true)?,
            gate: Linear::new(&scope.pp("gate"), 2 * hidden, hidden, true)?,
        })
    }

    /// Returns `(g, pool(ext), g·text + (1−g)·pool(ext))`.
    pub fn mix(&self, pooled_text: &Tensor, ext: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor, Tensor)> {
        let pooled = masked_mean(&self.proj.forward(ext)?, mask)?;
        let g = candle_nn::ops::sigmoid(&self.gate.forward(&Tensor::cat(&[pooled_text, &pooled], 1)?)?)?;
        let mixed = ((&g * pooled_text)? + (g.affine(-1.0, 1.0)? * &pooled)?)?;
        Ok((g, pooled, mixed))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    a: Linear,
    b: Linear,
}

impl Mlp {
    fn new(scope: &Scope, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            a: Linear::new(&scope.pp("fc1"), in_dim, hidden, true)?,
            b: Linear::new(&scope.pp("fc2"), hidden, 2, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.b.forward(&crate::nn::gelu(&self.a.forward(x)?)?)
    }
}

/// Debunk-side input to the TD branch: a `(batch, L, dim)` sequence and an
/// optional row mask.
#[derive(Debug, Clone, Copy)]
pub struct Source<'a> {
    pub features: &'a Tensor,
    pub mask: Option<&'a Tensor>,
}

#[derive(Debug, Clone)]
pub struct TdOutput {
    pub logits: Tensor,
    pub fused: Tensor,
    pub gates: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TdFusion {
    text_proj: Linear,
    self_attn: Attention,
    ln: LayerNorm,
    sources: Vec<(Evidence, Gate)>,
    mlp: Mlp,
}

impl TdFusion {
    /// `sources` lists each enabled external evidence with its feature width.
    pub fn new(
        scope: &Scope,
        text_dim: usize,
        hidden: usize,
        heads: usize,
        sources: &[(Evidence, usize)],
    ) -> Result<Self> {
        let gates = sources
            .iter()
            .map(|&(e, dim)| Ok((e, Gate::new(&scope.pp(&format!("gate_{}", e.name())), dim, hidden)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text_proj: Linear::new(&scope.pp("text_proj"), text_dim, hidden, true)?,
            self_attn: Attention::new(&scope.pp("self_attn"), hidden, hidden, hidden, heads, true)?,
            ln: LayerNorm::new(&scope.pp("ln"), hidden)?,
            mlp: Mlp::new(&scope.pp("mlp"), hidden * (1 + gates.len()), hidden)?,
            sources: gates,
        })
    }

    pub fn sources(&self) -> Vec<Evidence> {
        self.sources.iter().map(|(e, _)| *e).collect()
    }

    pub fn pool_text(&self, text: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = self.text_proj.forward(text)?;
        let x = self.ln.forward(&(&x + self.self_attn.forward(&x, &x, mask)?)?)?;
        masked_mean(&x, mask)
    }

    pub fn forward(
        &self,
        text: &Tensor,
        text_mask: Option<&Tensor>,
        debunk: Option<Source>,
        cod: Option<Source>,
    ) -> Result<TdOutput> {
        let pooled = self.pool_text(text, text_mask)?;
        let mut parts = vec![pooled.clone()];
        let mut gates = Vec::new();
        for (e, gate) in &self.sources {
            let src = match e {
                Evidence::Debunk => debunk.ok_or(Error::MissingFeature("debunk feature"))?,
                Evidence::Cod => cod.ok_or(Error::MissingFeature("chain-of-debunk feature"))?,
            };
            let (g, _, mixed) = gate.mix(&pooled, src.features, src.mask)?;
            gates.push(g);
            parts.push(mixed);
        }
        let fused = Tensor::cat(&parts, 1)?;
        Ok(TdOutput {
            logits: self.mlp.forward(&fused)?,
            fused,
            gates,
        })
    }
}

/// One aligned-text / modality pair for the MM branch.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub text: &'a Tensor,
    pub text_mask: Option<&'a Tensor>,
    pub other: &'a Tensor,
    pub other_mask: Option<&'a Tensor>,
}

#[derive(Debug, Clone)]
pub struct MmOutput {
    pub logits: Tensor,
    pub h_at: Option<Tensor>,
    pub h_vt: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct MmFusion {
    audio: Option<Attention>,
    vision: Option<Attention>,
    mlp: Mlp,
}

impl MmFusion {
    /// Dimensions are `(aligned text, modality)` per enabled branch.
    pub fn new(
        scope: &Scope,
        audio: Option<(usize, usize)>,
        vision: Option<(usize, usize)>,
        hidden: usize,
        heads: usize,
    ) -> Result<Self> {
        let n = audio.is_some() as usize + vision.is_some() as usize;
        if n == 0 {
            return Err(Error::Config("multimodal fusion needs audio or vision".into()));
        }
        let attn = |name: &str, dims: Option<(usize, usize)>| -> Result<Option<Attention>> {
            dims.map(|(t, m)| Attention::new(&scope.pp(name), t, m, hidden, heads, true))
                .transpose()
        };
        Ok(Self {
            audio: attn("audio_attn", audio)?,
            vision: attn("vision_attn", vision)?,
            mlp: Mlp::new(&scope.pp("mlp"), hidden * n, hidden)?,
        })
    }

    fn branch(attn: &Option<Attention>, pair: Option<Pair>, name: &'static str) -> Result<Option<(Tensor, Tensor)>> {
        match (attn, pair) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::MissingFeature(name)),
            (Some(a), Some(p)) => {
                let h = a.forward(p.text, p.other, p.other_mask)?;
                let pooled = masked_mean(&h, p.text_mask)?;
                Ok(Some((h, pooled)))
            }
        }
    }

    pub fn forward(&self, audio: Option<Pair>, vision: Option<Pair>) -> Result<MmOutput> {
        let a = Self::branch(&self.audio, audio, "audio feature")?;
        let v = Self::branch(&self.vision, vision, "vision feature")?;
        let pooled: Vec<Tensor> = a.iter().chain(v.iter()).map(|(_, p)| p.clone()).collect();
        Ok(MmOutput {
            logits: self.mlp.forward(&Tensor::cat(&pooled, 1)?)?,
            h_at: a.map(|(h, _)| h),
            h_vt: v.map(|(h, _)| h),
        })
    }
}

/// Late fusion `y_mm · tanh(y_td)`, per class.
pub fn verdict_fuse(y_mm: &Tensor, y_td: &Tensor) -> Result<Tensor> {
    Ok((y_mm * y_td.tanh()?)?)
}

/// Scalar form of [`verdict_fuse`].
pub fn verdict_fuse_scalar(y_mm: [f64; 2], y_td: [f64; 2]) -> [f64; 2] {
    [y_mm[0] * y_td[0].tanh(), y_mm[1] * y_td[1].tanh()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        for (name, value) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::NegativeWeight { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: Tensor,
    pub fnd: Tensor,
    pub mm: Option<Tensor>,
    pub td: Option<Tensor>,
    pub diff: Option<Tensor>,
}

/// `L_FND + α·L_mm + β·L_td + γ·L_diff`. Terms with weight 0 or absent are
/// left out of the graph entirely.
pub fn combine_losses(
    fnd: Tensor,
    mm: Option<Tensor>,
    td: Option<Tensor>,
    diff: Option<Tensor>,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.check()?;
    let mut total = fnd.clone();
    for (term, w) in [(&mm, weights.alpha), (&td, weights.beta), (&diff, weights.gamma)] {
        if let Some(t) = term {
            if w != 0.0 {
                total = (total + (t * w)?)?;
            }
        }
    }
    Ok(TotalLoss {
        total,
        fnd,
        mm,
        td,
        diff,
    })
}

/// Cross-entropy of each score vector against the labels, combined with the
/// diffusion loss.
pub fn total_loss(
    y_fnd: &Tensor,
    y_mm: Option<&Tensor>,
    y_td: Option<&Tensor>,
    targets: &Tensor,
    l_diff: Option<Tensor>,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.check()?;
    let ce = |y: Option<&Tensor>, w: f64| -> Result<Option<Tensor>> {
        match y {
            Some(y) if w != 0.0 => Ok(Some(cross_entropy(y, targets, None)?)),
            _ => Ok(None),
        }
    };
    combine_losses(
        cross_entropy(y_fnd, targets, None)?,
        ce(y_mm, weights.alpha)?,
        ce(y_td, weights.beta)?,
        if weights.gamma != 0.0 { l_diff } else { None },
        weights,
    )
}
