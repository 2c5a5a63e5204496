//! A generated corpus with planted, learnable structure, plus the mock LLM
//! agents and synthetic encoder tables that go with it.
//!
//! Every item has a topic with sign `s` and magnitude level `m`. The aligned
//! texts (`alpha`/`omega`) carry `s`, the audio carries `s·m`, and the
//! keyframes carry `+s` for REAL and `-s` for FAKE items. On "hard" items the
//! vision amplitude is faint. Viewer comments hold a cue word read by the
//! full-text encoder only: `suspicious` leans FAKE and `trustworthy` leans
//! REAL, wrong at a fixed noise rate, repeated a random number of times. Debunk
//! texts carry stance words, and each run of the mock verifier is right with a
//! fixed probability.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::augment::{augment_corpus, AugmentOptions, AugmentedRecord};
use crate::cod::{run_cod_corpus, CapitalizedTagger, CodAgents, CodOptions, CodRecord, UNAVAILABLE};
use crate::config::{InputModality, TrainConfig};
use crate::corpus::{Corpus, DebunkText, Label, Media, NewsItem, Style};
use crate::encoders::{EncoderEntry, EncoderSet};
use crate::error::Result;
use crate::features::{cod_key, extract, ExtractOptions, FeatureTable};
use crate::llm::{LlmRequest, MockLlm, TranscriptLog};

const WORDS: [&str; 24] = [
    "river", "market", "bridge", "storm", "school", "harbor", "festival", "council", "airport", "forest", "stadium",
    "factory", "village", "museum", "highway", "clinic", "garden", "tower", "station", "valley", "library", "canal",
    "square", "island",
];
const PLACES: [&str; 12] = [
    "Northfield",
    "Lakeside",
    "Brenton",
    "Carlow",
    "Dunmore",
    "Eastvale",
    "Fairhaven",
    "Glenrock",
    "Harlow",
    "Ivybridge",
    "Kingsport",
    "Millbrook",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub items: usize,
    pub events: usize,
    pub seed: u64,
    /// Share of items with a faint vision signal.
    pub hard_fraction: f64,
    /// Vision amplitude range for the other items.
    pub vision_amplitude: (f64, f64),
    /// Vision amplitude range for hard items.
    pub hard_amplitude: (f64, f64),
    /// Number of topic magnitude levels.
    pub levels: usize,
    pub comments: usize,
    /// Probability that the comment cue points at the wrong label.
    pub comment_noise: f64,
    /// Per-run verifier accuracy with every caption available; each missing
    /// caption lowers it by 0.1.
    pub verifier_accuracy: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            items: 600,
            events: 60,
            seed: 7,
            hard_fraction: 0.5,
            vision_amplitude: (0.8, 1.2),
            hard_amplitude: (0.0, 0.15),
            levels: 3,
            comments: 4,
            comment_noise: 0.05,
            verifier_accuracy: 0.8,
        }
    }
}

/// Latent facts behind one generated item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planted {
    pub sign: f64,
    pub level: usize,
    /// Number of cue words in the comments.
    pub comment_level: usize,
    /// Whether the comment cue reads FAKE.
    pub comment_fake: bool,
    pub hard: bool,
}

impl Planted {
    /// Signal value of the topic, as planted in the audio.
    pub fn topic(&self) -> f64 {
        self.sign * self.level as f64 * LEVEL_STEP
    }
}

/// Signal per topic level.
pub const LEVEL_STEP: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub planted: BTreeMap<String, Planted>,
    pub config: SynthConfig,
}

fn sign(label: Label) -> f64 {
    match label {
        Label::Fake => 1.0,
        Label::Real => -1.0,
    }
}

fn words(rng: &mut impl Rng, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect()
}

fn ground_truth(label: Label, rng: &mut impl Rng) -> DebunkText {
    let stance = label.stance();
    let cue = match label {
        Label::Fake => ["refuted", "fabricated", "misleading"],
        Label::Real => ["confirmed", "authentic", "verified"],
    };
    let body = format!(
        "fact check {} {} report about the {} {}",
        cue.choose(rng).expect("non-empty"),
        cue.choose(rng).expect("non-empty"),
        words(rng, 2).join(" "),
        cue.choose(rng).expect("non-empty"),
    );
    DebunkText::ground_truth(body, stance)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<Label> = (0..cfg.items)
        .map(|i| if i % 2 == 0 { Label::Real } else { Label::Fake })
        .collect();
    labels.shuffle(&mut rng);
    let mut items = Vec::with_capacity(cfg.items);
    let mut planted = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("syn-{i:04}");
        let sgn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let levels = cfg.levels.max(2);
        let level = rng.gen_range(1..=levels);
        let comment_level = rng.gen_range(1..=levels);
        let comment_fake = (label == Label::Fake) != rng.gen_bool(cfg.comment_noise);
        let hard = rng.gen_bool(cfg.hard_fraction);
        let (lo, hi) = if hard { cfg.hard_amplitude } else { cfg.vision_amplitude };
        let amp = rng.gen_range(lo..=hi);
        let vision = -sign(label) * sgn * amp;
        let planted_item = Planted {
            sign: sgn,
            level,
            comment_level,
            comment_fake,
            hard,
        };
        let token = if sgn > 0.0 { "alpha" } else { "omega" };
        let place = PLACES.choose(&mut rng).expect("non-empty");
        let title = format!("{place} {} {}", words(&mut rng, 2).join(" "), i % 97);
        let on_screen_text = format!("{token} {}", words(&mut rng, 2).join(" "));
        let transcript = format!(
            "{} {token} {}",
            words(&mut rng, 2).join(" "),
            words(&mut rng, 2).join(" ")
        );
        let cue = if comment_fake { "suspicious" } else { "trustworthy" };
        let mut comments: Vec<String> = (0..cfg.comments.max(1))
            .map(|_| words(&mut rng, 1)[0].to_string())
            .collect();
        for _ in 0..comment_level {
            let k = rng.gen_range(0..comments.len());
            comments[k].push(' ');
            comments[k].push_str(cue);
        }
        let gt = rng.gen_range(1..=2);
        let debunk_texts = (0..gt).map(|_| ground_truth(label, &mut rng)).collect();
        let frames = (0..4)
            .map(|f| format!("{id}/frame{f}.jpg"))
            .collect::<Vec<_>>()
            .join(", ");
        items.push(NewsItem {
            id: id.clone(),
            title,
            on_screen_text,
            transcript,
            comments,
            publisher_profile: format!("channel {}", rng.gen_range(0..20)),
            event_id: format!("ev{:03}", rng.gen_range(0..cfg.events.max(1))),
            published_at: 1_600_000_000 + i as i64 * 3600 + rng.gen_range(0..1800),
            label,
            debunk_texts,
            media: Media {
                keyframes: Some(format!("{frames} <sig:{vision:.4}>")),
                audio: Some(format!("{id}/audio.wav speech <sig:{:.2}>", planted_item.topic())),
            },
            feature_refs: BTreeMap::new(),
        });
        planted.insert(id, planted_item);
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(items)?,
        planted,
        config: cfg.clone(),
    })
}

/// Synthetic encoder tables for the generated corpus, keyed by modality name.
pub fn encoder_config() -> BTreeMap<String, EncoderEntry> {
    let lex = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let entry = |id: &str, dim, len, noise, lexicon| EncoderEntry {
        noise_scale: noise,
        lexicon,
        ..EncoderEntry::synthetic(id, dim, len)
    };
    let topic = lex(&[("alpha", 1.0), ("omega", -1.0)]);
    let mut m = BTreeMap::new();
    m.insert(
        "text".into(),
        entry(
            "syn-text",
            12,
            8,
            0.6,
            lex(&[("suspicious", LEVEL_STEP), ("trustworthy", -LEVEL_STEP)]),
        ),
    );
    m.insert("text_audio".into(), entry("syn-text-audio", 8, 6, 0.6, topic.clone()));
    m.insert("text_vision".into(), entry("syn-text-vision", 8, 6, 0.6, topic));
    m.insert("audio".into(), entry("syn-audio", 8, 3, 0.4, BTreeMap::new()));
    m.insert("vision".into(), entry("syn-vision", 8, 4, 0.4, BTreeMap::new()));
    m.insert(
        "debunk_text".into(),
        entry(
            "syn-debunk",
            12,
            8,
            0.6,
            lex(&[
                ("refuted", 0.6),
                ("fabricated", 0.6),
                ("misleading", 0.6),
                ("false", 0.6),
                ("confirmed", -0.6),
                ("authentic", -0.6),
                ("verified", -0.6),
                ("genuine", -0.6),
            ]),
        ),
    );
    m.insert(
        "cod_text".into(),
        entry("syn-cod", 8, 6, 0.4, lex(&[("FAKE", 1.0), ("REAL", -1.0)])),
    );
    m
}

fn unit(seed: u64) -> f64 {
    let h = Sha256::digest(seed.to_le_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as f64 / u64::MAX as f64
}

/// Augmentation backend that writes a stance-consistent text in the requested
/// style.
pub fn mock_augmenter(corpus: &Corpus) -> MockLlm {
    let labels: Arc<BTreeMap<String, Label>> =
        Arc::new(corpus.items().iter().map(|i| (i.id.clone(), i.label)).collect());
    MockLlm::with_handler("mock-augmenter", move |req: &LlmRequest<'_>| {
        let label = labels.get(req.item_id).copied().unwrap_or(Label::Real);
        let cue = match label {
            Label::Fake => ["false", "fabricated", "misleading", "refuted"],
            Label::Real => ["genuine", "authentic", "verified", "confirmed"],
        };
        let k = (unit(req.seed) * 4.0) as usize % 4;
        let style = req.stage.trim_start_matches("augment:");
        Ok(format!(
            "{style} note the clip is {} and the claim is {} according to {} sources",
            cue[k],
            cue[(k + 1) % 4],
            WORDS[(req.seed % WORDS.len() as u64) as usize]
        ))
    })
}

/// Captioning agents that describe without judging, and a verifier whose
/// runs are right with `verifier_accuracy - 0.1 · (missing captions)`.
pub struct MockAgents {
    pub text: MockLlm,
    pub vision: MockLlm,
    pub audio: MockLlm,
    pub verifier: MockLlm,
}

impl MockAgents {
    pub fn new(corpus: &Corpus, verifier_accuracy: f64) -> Self {
        let labels: Arc<BTreeMap<String, Label>> =
            Arc::new(corpus.items().iter().map(|i| (i.id.clone(), i.label)).collect());
        let caption = |id: &'static str, what: &'static str| {
            MockLlm::with_handler(id, move |req: &LlmRequest<'_>| {
                Ok(format!("{what} {}", WORDS[(req.seed % WORDS.len() as u64) as usize]))
            })
        };
        let verifier = MockLlm::with_handler("mock-verifier", move |req: &LlmRequest<'_>| {
            let label = labels.get(req.item_id).copied().unwrap_or(Label::Real);
            let missing = req.prompt.matches(UNAVAILABLE).count() as f64;
            let p = (verifier_accuracy - 0.1 * missing).clamp(0.0, 1.0);
            let right = unit(req.seed) < p;
            let said = if right == (label == Label::Fake) {
                "FAKE"
            } else {
                "REAL"
            };
            Ok(format!(
                "ANSWER: {said}\nthe captions and comments were weighed against the {}",
                WORDS[(req.seed % WORDS.len() as u64) as usize]
            ))
        });
        Self {
            text: caption("mock-text-agent", "the claim mentions"),
            vision: caption("mock-vision-agent", "the frames show"),
            audio: caption("mock-audio-agent", "the speaker talks about"),
            verifier,
        }
    }

    pub fn agents(&self, vision: bool, audio: bool) -> CodAgents<'_> {
        CodAgents {
            text: &self.text,
            vision: vision.then_some(&self.vision as _),
            audio: audio.then_some(&self.audio as _),
            verifier: &self.verifier,
        }
    }
}

/// Generated artifacts of the full preprocessing pipeline.
#[derive(Debug, Clone)]
pub struct SynthPipeline {
    pub augmented: Vec<AugmentedRecord>,
    pub cod: BTreeMap<String, Vec<CodRecord>>,
    pub table: FeatureTable,
}

/// Augmentation, chain of debunk for every modality variant, and feature
/// extraction, all with mock backends.
pub fn preprocess(synth: &SynthCorpus, threads: usize) -> Result<SynthPipeline> {
    let corpus = &synth.corpus;
    let log = TranscriptLog::memory();
    let augmenter = mock_augmenter(corpus);
    let options = AugmentOptions {
        seed: synth.config.seed,
        ..AugmentOptions::default()
    };
    let augmented = augment_corpus(corpus, &augmenter, &Style::AUGMENTATION, &options, &log, threads)?;
    let mut sidecar: BTreeMap<String, Vec<DebunkText>> = BTreeMap::new();
    for r in &augmented {
        sidecar.entry(r.item_id.clone()).or_default().push(r.debunk_text());
    }

    let agents = MockAgents::new(corpus, synth.config.verifier_accuracy);
    let cod_options = CodOptions {
        seed: synth.config.seed,
        ..CodOptions::default()
    };
    let mut cod = BTreeMap::new();
    for (vision, audio) in [(false, false), (true, false), (false, true), (true, true)] {
        let records = run_cod_corpus(
            corpus,
            &CapitalizedTagger,
            &agents.agents(vision, audio),
            &cod_options,
            &log,
            threads,
        )?;
        cod.insert(cod_key(vision, audio), records);
    }

    let encoders = EncoderSet::from_config(&encoder_config())?;
    let table = extract(
        corpus,
        &encoders,
        &ExtractOptions {
            augmented: Some(&sidecar),
            cod: cod.clone(),
            cod_runs: cod_options.runs,
            seed: synth.config.seed,
            ..ExtractOptions::default()
        },
    )?;
    Ok(SynthPipeline { augmented, cod, table })
}

/// A desk-scale model and schedule sized for the generated corpus.
pub fn train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: 11,
        lr: 3e-3,
        weight_decay: 1e-4,
        batch_size: 32,
        warmup_epochs: 20,
        max_epochs: 60,
        modalities: InputModality::ALL.to_vec(),
        ..TrainConfig::default()
    };
    cfg.compressor.latents = 4;
    cfg.compressor.dim = 8;
    cfg.compressor.heads = 2;
    cfg.diffusion.layers = 2;
    cfg.diffusion.heads = 2;
    cfg.diffusion.time_embedding_dim = 8;
    cfg.diffusion.steps = 8;
    cfg.diffusion.train_steps = Some(4);
    cfg.fusion.hidden = 16;
    cfg.fusion.heads = 2;
    cfg
}
