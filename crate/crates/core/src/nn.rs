//! Small neural-network toolkit on top of candle: a named, seeded parameter
//! store, the layers the models share, losses, Adam, and a finite-difference
//! gradient checker.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Module, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-b, b]`.
    Uniform(f64),
}

struct StoreInner {
    params: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

/// Named parameters, created on first request from a seeded generator so the
/// same construction order always yields the same initial weights.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<StoreInner>>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.lock().params.len())
            .finish()
    }
}

pub type Snapshot = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(StoreInner {
                params: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, StoreInner> {
        self.inner.lock().expect("param store lock")
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.lock();
        if let Some(v) = inner.params.get(name) {
            if v.dims() != shape {
                return Err(Error::DimMismatch(format!(
                    "parameter {name} exists with shape {:?}, requested {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut inner.rng)).collect()
            }
            Init::Uniform(b) => {
                let dist = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| dist.sample(&mut inner.rng)).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &device())?)?;
        let t = var.as_tensor().clone();
        inner.params.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn names(&self) -> Vec<String> {
        self.lock().params.keys().cloned().collect()
    }

    /// Parameters whose name starts with any of `prefixes` (all when empty).
    pub fn vars(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.lock()
            .params
            .iter()
            .filter(|(k, _)| prefixes.is_empty() || prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_scalars(&self, prefixes: &[&str]) -> usize {
        self.vars(prefixes).iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        self.lock()
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &Snapshot) -> Result<()> {
        let inner = self.lock();
        for (k, v) in &inner.params {
            let saved = snapshot
                .get(k)
                .ok_or_else(|| Error::Config(format!("snapshot lacks parameter {k}")))?;
            v.set(saved)?;
        }
        Ok(())
    }

    /// SHA-256 over names and little-endian values of the selected parameters.
    pub fn digest(&self, prefixes: &[&str]) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars(prefixes) {
            h.update(name.as_bytes());
            for x in var.as_tensor().flatten_all()?.to_vec1::<f64>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Writes one `<dir>/<group>.safetensors` file per group, where a parameter
    /// belongs to the longest group that prefixes its name (`misc` otherwise).
    /// Tensors keep their full names as keys.
    pub fn save_groups(&self, dir: &Path, groups: &[&str]) -> Result<()> {
        let mut files: BTreeMap<String, BTreeMap<String, Tensor>> = BTreeMap::new();
        for (name, var) in self.vars(&[]) {
            let group = groups
                .iter()
                .filter(|g| name.starts_with(&format!("{g}/")))
                .max_by_key(|g| g.len())
                .map(|g| g.to_string())
                .unwrap_or_else(|| "misc".to_string());
            files
                .entry(group)
                .or_default()
                .insert(name.clone(), var.as_tensor().detach());
        }
        for (group, tensors) in files {
            let path = dir.join(format!("{group}.safetensors"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let tensors: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
            candle_core::safetensors::save(&tensors, &path)?;
        }
        Ok(())
    }

    /// Loads every `*.safetensors` file below `dir` into matching parameters.
    pub fn load_dir(&self, dir: &Path) -> Result<usize> {
        let mut loaded = 0;
        let mut stack = vec![dir.to_path_buf()];
        let mut all: BTreeMap<String, Tensor> = BTreeMap::new();
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let path = entry.map_err(|e| Error::io(&d, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "safetensors") {
                    all.extend(candle_core::safetensors::load(&path, &device())?);
                }
            }
        }
        let inner = self.lock();
        for (name, var) in &inner.params {
            let t = all
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            var.set(&t.to_dtype(DTYPE)?)?;
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// A name prefix into a [`ParamStore`], in the spirit of candle's `VarBuilder`.
#[derive(Clone, Debug)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: &str) -> Scope {
        Scope {
            store: self.store.clone(),
            prefix: self.path(name),
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{name}", self.prefix)
        }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.get(&self.path(name), shape, init)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(scope, in_dim, out_dim, bias, Init::Uniform(bound))
    }

    pub fn with_init(scope: &Scope, in_dim: usize, out_dim: usize, bias: bool, init: Init) -> Result<Self> {
        let w = scope.get("weight", &[out_dim, in_dim], init)?;
        let b = if bias {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let binit = if matches!(init, Init::Zeros) {
                Init::Zeros
            } else {
                Init::Uniform(bound)
            };
            Some(scope.get("bias", &[out_dim], binit)?)
        } else {
            None
        };
        Ok(Self {
            inner: candle_nn::Linear::new(w, b),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.get("gamma", &[dim], Init::Ones)?,
            beta: scope.get("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = standardize(x, self.eps)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Zero mean and unit variance over the last axis, without an affine map.
pub fn standardize(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Two linear maps with a GELU in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(scope: &Scope, dim: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&scope.pp("up"), dim, hidden, true)?,
            down: Linear::new(&scope.pp("down"), hidden, out, true)?,
        })
    }

    /// Output layer starts at zero, so the block initially contributes nothing.
    pub fn zero_out(scope: &Scope, dim: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&scope.pp("up"), dim, hidden, true)?,
            down: Linear::with_init(&scope.pp("down"), hidden, out, true, Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&gelu(&self.up.forward(x)?)?)
    }
}

/// Multi-head attention with separate query and key/value inputs.
///
/// Projections carry no bias; the output projection is optional so that a
/// zeroed value map yields an exactly zero output.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Option<Linear>,
    heads: usize,
    dim: usize,
}

impl Attention {
    pub fn new(
        scope: &Scope,
        query_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
        out_proj: bool,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::DimMismatch(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(&scope.pp("q"), query_dim, dim, false)?,
            k: Linear::new(&scope.pp("k"), kv_dim, dim, false)?,
            v: Linear::new(&scope.pp("v"), kv_dim, dim, false)?,
            out: if out_proj {
                Some(Linear::new(&scope.pp("o"), dim, dim, false)?)
            } else {
                None
            },
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, query: &Tensor, kv: &Tensor, kv_mask: Option<&Tensor>) -> Result<Tensor> {
        let out = attend(
            &self.q.forward(query)?,
            &self.k.forward(kv)?,
            &self.v.forward(kv)?,
            self.heads,
            kv_mask,
        )?;
        match &self.out {
            Some(o) => o.forward(&out),
            None => Ok(out),
        }
    }
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, d) = x.dims3()?;
    Ok(x.reshape((b, l, heads, d / heads))?.transpose(1, 2)?.contiguous()?)
}

/// Scaled dot-product attention over already projected `(batch, len, dim)`
/// queries, keys and values. Keys with mask 0 receive no weight.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, kv_mask: Option<&Tensor>) -> Result<Tensor> {
    let (b, lq, dim) = q.dims3()?;
    if dim % heads != 0 {
        return Err(Error::DimMismatch(format!(
            "width {dim} not divisible by {heads} heads"
        )));
    }
    let qh = split_heads(q, heads)?;
    let kh = split_heads(k, heads)?;
    let vh = split_heads(v, heads)?;
    let scale = 1.0 / ((dim / heads) as f64).sqrt();
    let mut scores = (qh.matmul(&kh.t()?)? * scale)?;
    if let Some(mask) = kv_mask {
        let (mb, lk) = mask.dims2()?;
        let bias = ((mask - 1.0)? * 1e9)?.reshape((mb, 1, 1, lk))?;
        scores = scores.broadcast_add(&bias)?;
    }
    let w = candle_nn::ops::softmax(&scores, D::Minus1)?;
    Ok(w.matmul(&vh)?.transpose(1, 2)?.reshape((b, lq, dim))?)
}

/// Tanh-approximated GELU composed from primitive ops. candle's fused op
/// differentiates with six-digit constants, which breaks tight gradient checks.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = ((x + (x.powf(3.0)? * 0.044715)?)? * c)?;
    Ok(((x * 0.5)? * (inner.tanh()? + 1.0)?)?)
}

/// Mean over rows of `(batch, len, dim)`, counting only rows with mask 1.
pub fn masked_mean(x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        None => Ok(x.mean(1)?),
        Some(m) => {
            let m3 = m.unsqueeze(D::Minus1)?;
            let sum = x.broadcast_mul(&m3)?.sum(1)?;
            let count = m.sum_keepdim(1)?;
            Ok(sum.broadcast_div(&count)?)
        }
    }
}

pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// One-hot `(batch, 2)` targets for class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut v = vec![0.0f64; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        v[i * classes + l] = 1.0;
    }
    Ok(Tensor::from_vec(v, (labels.len(), classes), &device())?)
}

/// Mean cross-entropy of `(batch, classes)` logits against one-hot targets.
/// `weights` (per row, 0/1) restricts the mean to selected rows.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    let nll = (log_softmax(logits)? * targets)?.sum(D::Minus1)?.neg()?;
    match weights {
        None => Ok(nll.mean_all()?),
        Some(w) => {
            let denom = w.sum_all()?.to_scalar::<f64>()?.max(1.0);
            Ok(((nll * w)?.sum_all()? / denom)?)
        }
    }
}

/// Sinusoidal features `[sin(p w_i), cos(p w_i)]` with `w_i = 10000^(-2i/dim)`.
pub fn sinusoidal(positions: &[f64], dim: usize) -> Result<Tensor> {
    let half = dim / 2;
    let mut v = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        let mut row = vec![0.0; dim];
        for i in 0..half {
            let w = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
            row[i] = (p * w).sin();
            row[half + i] = (p * w).cos();
        }
        v.extend(row);
    }
    Ok(Tensor::from_vec(v, (positions.len(), dim), &device())?)
}

/// Adam with L2 weight decay folded into the gradient and a per-parameter step
/// count; parameters without a gradient in a step are left untouched.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: BTreeMap<String, (Tensor, Tensor, i32)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, vars: &[(String, Var)], grads: &GradStore) -> Result<usize> {
        let mut updated = 0;
        for (name, var) in vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let theta = var.as_tensor().detach();
            let g = if self.weight_decay != 0.0 {
                (g + (&theta * self.weight_decay)?)?
            } else {
                g.clone()
            };
            let entry = match self.state.remove(name) {
                Some(s) => s,
                None => (theta.zeros_like()?, theta.zeros_like()?, 0),
            };
            let (m, v, t) = entry;
            let t = t + 1;
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / (1.0 - self.beta1.powi(t)))?;
            let v_hat = (&v / (1.0 - self.beta2.powi(t)))?;
            let delta = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(theta - (delta * self.lr)?)?)?;
            self.state.insert(name.clone(), (m, v, t));
            updated += 1;
        }
        Ok(updated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares backprop gradients with central differences `(f(x+h)-f(x-h))/2h`
/// for every scalar of `vars`. Relative error is `|a-n| / max(|a|, |n|, floor)`,
/// so gradients far below `floor` are judged on absolute agreement.
pub fn finite_difference_check<F>(
    vars: &[(String, Var)],
    grads: &GradStore,
    loss: F,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<f64>,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (name, var) in vars {
        let base = var.as_tensor().detach().copy()?;
        let shape = base.dims().to_vec();
        let values = base.flatten_all()?.to_vec1::<f64>()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; values.len()],
        };
        for i in 0..values.len() {
            let mut probe = values.clone();
            probe[i] = values[i] + h;
            var.set(&Tensor::from_vec(probe.clone(), shape.as_slice(), &device())?)?;
            let up = loss()?;
            probe[i] = values[i] - h;
            var.set(&Tensor::from_vec(probe, shape.as_slice(), &device())?)?;
            let down = loss()?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
        var.set(&base)?;
    }
    Ok(report)
}

pub fn to_vec2(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DTYPE)?.to_vec2::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}
