//! Per-item encoded features: the model inputs of every modality, the debunk
//! text sets used to train the diffusion branch and the encoded
//! chain-of-debunk records.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::hybrid_sample;
use crate::cod::{encode_cod, CodRecord};
use crate::corpus::{Corpus, DebunkSource, DebunkText, Label, NewsItem};
use crate::encoders::{EncoderInput, EncoderSet, FeatureCache, FeatureSeq, Modality};
use crate::error::{Error, Result};

/// Which debunk texts feed the diffusion branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebunkPolicy {
    /// Ground-truth texts only.
    Original,
    /// Hybrid sampling of ground-truth and LLM-augmented texts.
    Augmented,
}

impl DebunkPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DebunkPolicy::Original => "original",
            DebunkPolicy::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Self::Original),
            "augmented" => Ok(Self::Augmented),
            other => Err(Error::Config(format!("unknown debunk source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub id: String,
    pub label: Label,
    pub text: FeatureSeq,
    pub text_audio: Option<FeatureSeq>,
    pub text_vision: Option<FeatureSeq>,
    pub audio: Option<FeatureSeq>,
    pub vision: Option<FeatureSeq>,
    pub debunks: BTreeMap<DebunkPolicy, Vec<FeatureSeq>>,
    /// Encoded chain-of-debunk record per variant key (see [`cod_key`]).
    pub cod: BTreeMap<String, FeatureSeq>,
}

impl ItemFeatures {
    pub fn debunks(&self, policy: DebunkPolicy) -> &[FeatureSeq] {
        self.debunks.get(&policy).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Widths of every feature family in a table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub text: usize,
    pub text_audio: Option<usize>,
    pub text_vision: Option<usize>,
    pub audio: Option<usize>,
    pub vision: Option<usize>,
    pub debunk: Option<usize>,
    pub debunk_max_len: Option<usize>,
    pub cod: Option<usize>,
}

/// Key of a chain-of-debunk variant run with the given captioning agents,
/// e.g. `"TVA"` for text, vision and audio.
pub fn cod_key(vision: bool, audio: bool) -> String {
    let mut k = String::from("T");
    if vision {
        k.push('V');
    }
    if audio {
        k.push('A');
    }
    k
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    pub dims: FeatureDims,
    items: Vec<ItemFeatures>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(dims: FeatureDims, items: Vec<ItemFeatures>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            if index.insert(it.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: it.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { dims, items, index })
    }

    pub fn items(&self) -> &[ItemFeatures] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ItemFeatures> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Resolves ids to table rows, failing on the first unknown id.
    pub fn rows(&self, ids: &[String]) -> Result<Vec<&ItemFeatures>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::InvalidSplit(format!("split references unknown item {id:?}")))
            })
            .collect()
    }

    pub fn cod_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.items.iter().flat_map(|i| i.cod.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// Copy with `f` applied to every item.
    pub fn map_items(&self, f: impl FnMut(&mut ItemFeatures)) -> Result<FeatureTable> {
        let mut items = self.items.clone();
        items.iter_mut().for_each(f);
        FeatureTable::new(self.dims, items)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        bincode::serialize_into(BufWriter::new(file), self)
            .map_err(|e| Error::Config(format!("cannot write features: {e}")))
    }

    pub fn load(path: &Path) -> Result<FeatureTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: FeatureTable = bincode::deserialize_from(BufReader::new(file))
            .map_err(|e| Error::Config(format!("cannot read features {}: {e}", path.display())))?;
        FeatureTable::new(raw.dims, raw.items)
    }
}

/// Inputs to feature extraction besides the corpus and encoders.
#[derive(Debug, Clone, Default)]
pub struct ExtractOptions<'a> {
    /// Augmented debunk texts per item id (the augmentation sidecar).
    pub augmented: Option<&'a BTreeMap<String, Vec<DebunkText>>>,
    /// Chain-of-debunk records per variant key.
    pub cod: BTreeMap<String, Vec<CodRecord>>,
    pub cod_runs: usize,
    pub debunk_target: usize,
    pub seed: u64,
    pub cache: Option<&'a FeatureCache>,
}

fn item_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Debunk texts for one item under `policy`. Pools smaller than `target` are
/// used whole; an empty pool leaves the item without debunk supervision.
pub fn select_debunks(
    item: &NewsItem,
    augmented: &[DebunkText],
    policy: DebunkPolicy,
    target: usize,
    seed: u64,
) -> Result<Vec<DebunkText>> {
    let mut pool: Vec<DebunkText> = item.ground_truth_debunks().cloned().collect();
    if policy == DebunkPolicy::Augmented {
        pool.extend(
            item.debunk_texts
                .iter()
                .filter(|d| d.source == DebunkSource::LlmAugmented)
                .cloned(),
        );
        for d in augmented {
            if !pool.iter().any(|p| p.body == d.body) {
                pool.push(d.clone());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, &item.id));
    match hybrid_sample(&pool, target, &mut rng) {
        Ok(v) => Ok(v),
        Err(Error::InsufficientPool { available, .. }) => {
            let n = available.min(pool.len());
            hybrid_sample(&pool, n, &mut rng)
        }
        Err(e) => Err(e),
    }
}

fn encode(
    encoders: &EncoderSet,
    cache: Option<&FeatureCache>,
    modality: Modality,
    input: EncoderInput<'_>,
) -> Result<FeatureSeq> {
    match cache {
        Some(c) => Ok(encoders.encode_cached(c, modality, input)?.1),
        None => encoders.encode(modality, input),
    }
}

fn optional(encoders: &EncoderSet, modality: Modality) -> bool {
    encoders.spec(modality).is_ok()
}

/// Encodes every item of `corpus`. Modalities without a registered encoder
/// are left empty; the text encoder is mandatory.
pub fn extract(corpus: &Corpus, encoders: &EncoderSet, options: &ExtractOptions<'_>) -> Result<FeatureTable> {
    let target = if options.debunk_target == 0 {
        crate::augment::DEFAULT_TARGET
    } else {
        options.debunk_target
    };
    let has = |m| optional(encoders, m);
    let cod_index: BTreeMap<&str, BTreeMap<&str, &CodRecord>> = options
        .cod
        .iter()
        .map(|(k, recs)| (k.as_str(), recs.iter().map(|r| (r.item_id.as_str(), r)).collect()))
        .collect();
    if !cod_index.is_empty() && !has(Modality::CodText) {
        return Err(Error::BackendUnavailable(
            "chain-of-debunk records given but no cod_text encoder".into(),
        ));
    }

    let mut items = Vec::with_capacity(corpus.len());
    for item in corpus.items() {
        let enc_item = |m: Modality| -> Result<Option<FeatureSeq>> {
            if has(m) {
                encode(encoders, options.cache, m, EncoderInput::Item(item)).map(Some)
            } else {
                Ok(None)
            }
        };
        let text = encode(encoders, options.cache, Modality::Text, EncoderInput::Item(item))?;
        let mut debunks = BTreeMap::new();
        if has(Modality::DebunkText) {
            let extra: &[DebunkText] = options
                .augmented
                .and_then(|a| a.get(&item.id))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            for policy in [DebunkPolicy::Original, DebunkPolicy::Augmented] {
                let texts = select_debunks(item, extra, policy, target, options.seed)?;
                let seqs = texts
                    .iter()
                    .map(|d| {
                        encode(
                            encoders,
                            options.cache,
                            Modality::DebunkText,
                            EncoderInput::Text(&d.body),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                debunks.insert(policy, seqs);
            }
        }
        let mut cod = BTreeMap::new();
        for (key, records) in &cod_index {
            let rec = records.get(item.id.as_str()).ok_or_else(|| Error::IncompleteRecord {
                item_id: item.id.clone(),
                runs: 0,
                expected: options.cod_runs,
            })?;
            cod.insert(key.to_string(), encode_cod(rec, encoders, options.cod_runs)?);
        }
        items.push(ItemFeatures {
            id: item.id.clone(),
            label: item.label,
            text,
            text_audio: enc_item(Modality::TextAudioAligned)?,
            text_vision: enc_item(Modality::TextVisionAligned)?,
            audio: enc_item(Modality::Audio)?,
            vision: enc_item(Modality::Vision)?,
            debunks,
            cod,
        });
    }

    let dim = |m| encoders.dim(m).ok();
    let dims = FeatureDims {
        text: encoders.dim(Modality::Text)?,
        text_audio: dim(Modality::TextAudioAligned),
        text_vision: dim(Modality::TextVisionAligned),
        audio: dim(Modality::Audio),
        vision: dim(Modality::Vision),
        debunk: dim(Modality::DebunkText),
        debunk_max_len: encoders.spec(Modality::DebunkText).ok().map(|s| s.max_length),
        cod: if cod_index.is_empty() {
            None
        } else {
            dim(Modality::CodText)
        },
    };
    FeatureTable::new(dims, items)
}
