use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{Encoder, EncoderSpec, FeatureSeq, Modality};
use crate::error::Result;

/// Inline signal tag understood by [`SyntheticEncoder`], e.g. `<sig:-0.75>`.
pub const SIGNAL_TAG: &str = r"<sig:([+-]?[0-9]*\.?[0-9]+)>";

/// Deterministic stand-in for a pretrained encoder.
///
/// Whitespace tokens map to rows (at least one, at most `max_length`). The
/// SHA-256 of `(encoder_id, modality, dim, input bytes)` seeds a ChaCha8 stream
/// of standard normals scaled by `noise_scale`. A scalar signal, the sum of all
/// `<sig:v>` tags plus lexicon hits, is added along a fixed unit-RMS direction
/// derived from `(encoder_id, modality)`. Entries are squashed with `tanh`, so
/// every value lies in (-1, 1).
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    encoder_id: String,
    noise_scale: f64,
    lexicon: BTreeMap<String, f64>,
    tag: Regex,
}

impl SyntheticEncoder {
    pub fn new(encoder_id: impl Into<String>) -> Self {
        Self {
            encoder_id: encoder_id.into(),
            noise_scale: 1.0,
            lexicon: BTreeMap::new(),
            tag: Regex::new(SIGNAL_TAG).expect("static regex"),
        }
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    /// Tokens (exact match) that contribute a signal value wherever they occur.
    pub fn with_lexicon(mut self, lexicon: BTreeMap<String, f64>) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn signal_of(&self, input: &str) -> f64 {
        let tagged: f64 = self
            .tag
            .captures_iter(input)
            .filter_map(|c| c[1].parse::<f64>().ok())
            .sum();
        let lexical: f64 = if self.lexicon.is_empty() {
            0.0
        } else {
            input
                .split_whitespace()
                .filter_map(|t| self.lexicon.get(t.trim_matches(|c: char| !c.is_alphanumeric())))
                .sum()
        };
        tagged + lexical
    }

    /// The unit-RMS direction along which signal is planted.
    pub fn direction(&self, modality: Modality, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(digest(&[
            self.encoder_id.as_bytes(),
            modality.as_str().as_bytes(),
            b"direction",
        ]));
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rms = (raw.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
        raw.into_iter().map(|v| v / rms).collect()
    }
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

impl Encoder for SyntheticEncoder {
    fn backend_id(&self) -> &str {
        &self.encoder_id
    }

    fn supports(&self, _modality: Modality) -> bool {
        true
    }

    fn encode_raw(&self, input: &str, spec: &EncoderSpec) -> Result<FeatureSeq> {
        let stripped = self.tag.replace_all(input, " ");
        let tokens = stripped.split_whitespace().count();
        let rows = tokens.clamp(1, spec.max_length.max(1));
        let dim = spec.output_dim;
        let seed = digest(&[
            self.encoder_id.as_bytes(),
            spec.modality.as_str().as_bytes(),
            &(dim as u64).to_le_bytes(),
            input.as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let signal = self.signal_of(input);
        let dir = self.direction(spec.modality, dim);
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            for d in &dir {
                let n: f64 = StandardNormal.sample(&mut rng);
                data.push((self.noise_scale * n + signal * d).tanh() as f32);
            }
        }
        FeatureSeq::new(data, rows, dim, spec.modality, self.encoder_id.clone())
    }
}
