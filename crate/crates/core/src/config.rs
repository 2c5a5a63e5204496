//! Training configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ScheduleKind;
use crate::encoders::EncoderEntry;
use crate::error::{Error, Result};
use crate::features::{cod_key, DebunkPolicy};
use crate::fusion::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Module {
    #[serde(rename = "MM_F")]
    MmFusion,
    #[serde(rename = "DD")]
    DebunkDiffusion,
    #[serde(rename = "COD")]
    ChainOfDebunk,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::MmFusion, Module::DebunkDiffusion, Module::ChainOfDebunk];

    pub fn as_str(self) -> &'static str {
        match self {
            Module::MmFusion => "MM_F",
            Module::DebunkDiffusion => "DD",
            Module::ChainOfDebunk => "COD",
        }
    }

    /// Short label as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Module::MmFusion => "MM-F",
            Module::DebunkDiffusion => "DD",
            Module::ChainOfDebunk => "COD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Module::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown module {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InputModality {
    Text,
    Vision,
    Audio,
}

impl InputModality {
    pub const ALL: [InputModality; 3] = [InputModality::Text, InputModality::Vision, InputModality::Audio];

    pub fn as_str(self) -> &'static str {
        match self {
            InputModality::Text => "TEXT",
            InputModality::Vision => "VISION",
            InputModality::Audio => "AUDIO",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase();
        InputModality::ALL
            .into_iter()
            .find(|m| m.as_str() == norm || m.as_str()[..1] == norm)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorSection {
    pub latents: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
}

impl Default for CompressorSection {
    fn default() -> Self {
        Self {
            latents: 16,
            dim: 64,
            heads: 4,
            ff_mult: 2,
        }
    }
}

/// Where the denoised-latent classification loss reads its latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoisedLoss {
    /// After the refinement network.
    Refined,
    /// Straight out of the denoiser.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    /// DDIM steps at inference.
    pub steps: usize,
    /// DDIM steps used to produce debunk features during joint training;
    /// `steps` when unset.
    pub train_steps: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    /// Denoiser width; the latent width when unset.
    pub model_dim: Option<usize>,
    pub time_embedding_dim: usize,
    pub schedule: ScheduleKind,
    pub horizon: f64,
    pub denoised_loss: DenoisedLoss,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            steps: 50,
            train_steps: None,
            layers: 4,
            heads: 4,
            model_dim: None,
            time_embedding_dim: 32,
            schedule: ScheduleKind::Cosine,
            horizon: 1.0,
            denoised_loss: DenoisedLoss::Refined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub hidden: usize,
    pub heads: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { hidden: 64, heads: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    /// Total epochs, warm-up included.
    pub max_epochs: usize,
    pub modules: Vec<Module>,
    pub modalities: Vec<InputModality>,
    pub debunk_source: DebunkPolicy,
    /// Chain-of-debunk feature variant; derived from `modalities` when unset.
    pub cod_variant: Option<String>,
    pub compressor: CompressorSection,
    pub diffusion: DiffusionSection,
    pub loss: LossWeights,
    pub fusion: FusionSection,
    /// Optional encoder tables, used by feature extraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoders: Option<BTreeMap<String, EncoderEntry>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 1e-4,
            weight_decay: 5e-3,
            batch_size: 64,
            warmup_epochs: 20,
            max_epochs: 80,
            modules: Module::ALL.to_vec(),
            modalities: InputModality::ALL.to_vec(),
            debunk_source: DebunkPolicy::Augmented,
            cod_variant: None,
            compressor: CompressorSection::default(),
            diffusion: DiffusionSection::default(),
            loss: LossWeights::default(),
            fusion: FusionSection::default(),
            encoders: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sorts and dedups the flag lists so equivalent configs compare equal.
    pub fn normalize(&mut self) {
        self.modules.sort();
        self.modules.dedup();
        self.modalities.sort();
        self.modalities.dedup();
    }

    pub fn has(&self, m: Module) -> bool {
        self.modules.contains(&m)
    }

    pub fn uses(&self, m: InputModality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn cod_variant(&self) -> String {
        self.cod_variant
            .clone()
            .unwrap_or_else(|| cod_key(self.uses(InputModality::Vision), self.uses(InputModality::Audio)))
    }

    pub fn train_steps(&self) -> usize {
        self.diffusion.train_steps.unwrap_or(self.diffusion.steps)
    }

    /// Epochs of the joint phase: whatever follows the warm-up budget.
    pub fn joint_epochs(&self) -> usize {
        self.max_epochs.saturating_sub(self.warmup_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.modules.is_empty() {
            return bad("at least one module must be enabled".into());
        }
        if !self.uses(InputModality::Text) {
            return bad("TEXT must be among the modalities".into());
        }
        if self.has(Module::MmFusion) && !(self.uses(InputModality::Vision) || self.uses(InputModality::Audio)) {
            return bad("MM_F needs VISION or AUDIO".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs < self.warmup_epochs {
            return bad(format!(
                "max_epochs ({}) counts the warm-up and must be at least warmup_epochs ({})",
                self.max_epochs, self.warmup_epochs
            ));
        }
        if self.diffusion.steps == 0 || self.train_steps() == 0 {
            return bad("diffusion steps must be at least 1".into());
        }
        self.loss.check()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn modules_label(&self) -> String {
        self.modules.iter().map(|m| m.label()).collect::<Vec<_>>().join("+")
    }

    pub fn modalities_label(&self) -> String {
        self.modalities
            .iter()
            .map(|m| &m.as_str()[..1])
            .collect::<Vec<_>>()
            .join("+")
    }
}
