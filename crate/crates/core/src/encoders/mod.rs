//! Feature extraction: the [`Encoder`] abstraction, the deterministic synthetic
//! backend, an HTTP adapter for real embedding services, and the on-disk cache.

mod cache;
mod http;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{checksum_hex, FeatureCache};
pub use http::HttpEncoder;
pub use synthetic::{SyntheticEncoder, SIGNAL_TAG};

use crate::corpus::NewsItem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    TextAudioAligned,
    TextVisionAligned,
    Audio,
    Vision,
    DebunkText,
    CodText,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Text,
        Modality::TextAudioAligned,
        Modality::TextVisionAligned,
        Modality::Audio,
        Modality::Vision,
        Modality::DebunkText,
        Modality::CodText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::TextAudioAligned => "text_audio",
            Modality::TextVisionAligned => "text_vision",
            Modality::Audio => "audio",
            Modality::Vision => "vision",
            Modality::DebunkText => "debunk_text",
            Modality::CodText => "cod_text",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// The input string an item contributes to this modality, or `None` for
    /// modalities that are not derived from the item itself.
    pub fn item_input(self, item: &NewsItem) -> Option<String> {
        use crate::corpus::join_nonempty;
        Some(match self {
            Modality::Text => item.full_text(),
            Modality::TextAudioAligned => join_nonempty(&[&item.title, &item.transcript]),
            Modality::TextVisionAligned => item.claim_text(),
            Modality::Audio => item.media.audio.clone().unwrap_or_else(|| "<no-audio>".into()),
            Modality::Vision => item.media.keyframes.clone().unwrap_or_else(|| "<no-keyframes>".into()),
            Modality::DebunkText | Modality::CodText => return None,
        })
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub encoder_id: String,
    pub modality: Modality,
    pub output_dim: usize,
    pub max_length: usize,
}

impl EncoderSpec {
    pub fn new(encoder_id: impl Into<String>, modality: Modality, output_dim: usize, max_length: usize) -> Self {
        Self {
            encoder_id: encoder_id.into(),
            modality,
            output_dim,
            max_length,
        }
    }
}

/// A `(rows, dim)` row-major feature matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeq {
    data: Vec<f32>,
    rows: usize,
    dim: usize,
    pub modality: Modality,
    pub encoder_id: String,
}

impl FeatureSeq {
    pub fn new(
        data: Vec<f32>,
        rows: usize,
        dim: usize,
        modality: Modality,
        encoder_id: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidFeature(format!("empty shape ({rows}, {dim})")));
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidFeature(format!(
                "{} values do not fill ({rows}, {dim})",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature(format!(
                "non-finite entry at row {}, col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            data,
            rows,
            dim,
            modality,
            encoder_id: encoder_id.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn check_spec(&self, spec: &EncoderSpec) -> Result<()> {
        if self.dim != spec.output_dim || self.modality != spec.modality {
            return Err(Error::DimMismatch(format!(
                "feature ({}, {}) from {} does not match registered ({}, {}) of {}",
                self.modality, self.dim, self.encoder_id, spec.modality, spec.output_dim, spec.encoder_id
            )));
        }
        Ok(())
    }

    /// Element-wise mean of sequences with identical shape.
    pub fn mean_of(seqs: &[FeatureSeq]) -> Result<FeatureSeq> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::InvalidFeature("mean of zero sequences".into()))?;
        if seqs.iter().any(|s| s.rows != first.rows || s.dim != first.dim) {
            return Err(Error::DimMismatch("mean over sequences of different shapes".into()));
        }
        let n = seqs.len() as f64;
        let data = (0..first.data.len())
            .map(|i| (seqs.iter().map(|s| s.data[i] as f64).sum::<f64>() / n) as f32)
            .collect();
        FeatureSeq::new(data, first.rows, first.dim, first.modality, first.encoder_id.clone())
    }
}

pub enum EncoderInput<'a> {
    Item(&'a NewsItem),
    Text(&'a str),
}

impl EncoderInput<'_> {
    fn resolve(&self, modality: Modality, encoder_id: &str) -> Result<String> {
        match self {
            EncoderInput::Text(t) => Ok((*t).to_string()),
            EncoderInput::Item(item) => modality.item_input(item).ok_or_else(|| Error::UnsupportedModality {
                modality: modality.to_string(),
                encoder_id: encoder_id.to_string(),
            }),
        }
    }
}

/// A feature extractor for one or more modalities. Implementations are stateless
/// with respect to inputs and callable from many threads.
pub trait Encoder: Send + Sync {
    fn backend_id(&self) -> &str;

    fn supports(&self, modality: Modality) -> bool;

    /// Encodes a resolved input string (text, or a media path for audio/vision).
    fn encode_raw(&self, input: &str, spec: &EncoderSpec) -> Result<FeatureSeq>;
}

/// Encodes an item or raw text with `encoder` and enforces the `EncoderSpec` contract.
pub fn encode(encoder: &dyn Encoder, input: EncoderInput<'_>, spec: &EncoderSpec) -> Result<FeatureSeq> {
    if !encoder.supports(spec.modality) {
        return Err(Error::UnsupportedModality {
            modality: spec.modality.to_string(),
            encoder_id: spec.encoder_id.clone(),
        });
    }
    let raw = input.resolve(spec.modality, &spec.encoder_id)?;
    let seq = encoder.encode_raw(&raw, spec)?;
    seq.check_spec(spec)?;
    if seq.rows() > spec.max_length {
        let dim = seq.dim();
        let data = seq.data[..spec.max_length * dim].to_vec();
        return FeatureSeq::new(data, spec.max_length, dim, seq.modality, seq.encoder_id);
    }
    Ok(seq)
}

/// Content-addressed cache key for an encoder input.
pub fn cache_key(spec: &EncoderSpec, input: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(spec.encoder_id.as_bytes());
    h.update([0]);
    h.update(spec.modality.as_str().as_bytes());
    h.update([0]);
    h.update(spec.output_dim.to_le_bytes());
    h.update(spec.max_length.to_le_bytes());
    h.update(input.as_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Synthetic,
    Http,
}

/// One `[modality]` table of the encoder config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEntry {
    pub backend: BackendKind,
    pub encoder_id: String,
    pub dim: usize,
    pub max_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lexicon: BTreeMap<String, f64>,
}

fn default_noise() -> f64 {
    1.0
}

impl EncoderEntry {
    pub fn synthetic(encoder_id: &str, dim: usize, max_length: usize) -> Self {
        Self {
            backend: BackendKind::Synthetic,
            encoder_id: encoder_id.into(),
            dim,
            max_length,
            endpoint: None,
            noise_scale: 1.0,
            lexicon: BTreeMap::new(),
        }
    }
}

/// The registered encoder for every modality the pipeline consumes.
#[derive(Clone)]
pub struct EncoderSet {
    entries: BTreeMap<Modality, (EncoderSpec, Arc<dyn Encoder>)>,
}

impl fmt::Debug for EncoderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(m, (s, _))| (m, s)))
            .finish()
    }
}

impl EncoderSet {
    pub fn from_config(config: &BTreeMap<String, EncoderEntry>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (name, entry) in config {
            let modality =
                Modality::parse(name).ok_or_else(|| Error::Config(format!("unknown modality table [{name}]")))?;
            let spec = EncoderSpec::new(entry.encoder_id.clone(), modality, entry.dim, entry.max_length);
            let encoder: Arc<dyn Encoder> = match entry.backend {
                BackendKind::Synthetic => Arc::new(
                    SyntheticEncoder::new(entry.encoder_id.clone())
                        .with_noise(entry.noise_scale)
                        .with_lexicon(entry.lexicon.clone()),
                ),
                BackendKind::Http => Arc::new(HttpEncoder::new(entry.encoder_id.clone(), entry.endpoint.clone())),
            };
            entries.insert(modality, (spec, encoder));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: BTreeMap<String, EncoderEntry> =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_config(&config)
    }

    pub fn spec(&self, modality: Modality) -> Result<&EncoderSpec> {
        self.entries
            .get(&modality)
            .map(|(s, _)| s)
            .ok_or_else(|| Error::BackendUnavailable(format!("no encoder registered for {modality}")))
    }

    pub fn dim(&self, modality: Modality) -> Result<usize> {
        Ok(self.spec(modality)?.output_dim)
    }

    pub fn encode(&self, modality: Modality, input: EncoderInput<'_>) -> Result<FeatureSeq> {
        let (spec, enc) = self
            .entries
            .get(&modality)
            .ok_or_else(|| Error::BackendUnavailable(format!("no encoder registered for {modality}")))?;
        encode(enc.as_ref(), input, spec)
    }

    /// Encodes through the cache, keyed by the content hash of the input.
    pub fn encode_cached(
        &self,
        cache: &FeatureCache,
        modality: Modality,
        input: EncoderInput<'_>,
    ) -> Result<(String, FeatureSeq)> {
        let (spec, enc) = self
            .entries
            .get(&modality)
            .ok_or_else(|| Error::BackendUnavailable(format!("no encoder registered for {modality}")))?;
        let raw = input.resolve(modality, &spec.encoder_id)?;
        let key = cache_key(spec, &raw);
        let produce = || encode(enc.as_ref(), EncoderInput::Text(&raw), spec);
        let seq = match cache.get_or_encode(&key, spec, produce) {
            Err(Error::CacheCorrupt { key, reason }) => {
                log::warn!("re-encoding corrupt cache entry {key}: {reason}");
                cache.remove(&key, spec)?;
                cache.get_or_encode(&key, spec, produce)?
            }
            other => other?,
        };
        Ok((key, seq))
    }
}
