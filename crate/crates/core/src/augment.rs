//! Multi-style debunk-text augmentation and the hybrid sampling policy that
//! fixes the number of debunk texts per training instance.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, DebunkSource, DebunkText, NewsItem, Stance, Style};
use crate::error::{Error, Result};
use crate::llm::{generate_with_retry, prompt_hash, LlmClient, LlmRequest, TranscriptLog};

pub const DEFAULT_TARGET: usize = 5;
pub const DEFAULT_MAX_RETRIES: usize = 3;

const PLACEHOLDERS: [&str; 4] = ["{news_text}", "{related}", "{existing}", "{style_instruction}"];

macro_rules! builtin {
    ($style:literal, $stance:literal) => {
        (
            concat!($style, "_", $stance),
            include_str!(concat!("../prompts/augment/", $style, "_", $stance, ".txt")),
        )
    };
}

const BUILTIN: [(&str, &str); 10] = [
    builtin!("official", "refute"),
    builtin!("official", "authenticate"),
    builtin!("friendly", "refute"),
    builtin!("friendly", "authenticate"),
    builtin!("educational", "refute"),
    builtin!("educational", "authenticate"),
    builtin!("logical", "refute"),
    builtin!("logical", "authenticate"),
    builtin!("direct", "refute"),
    builtin!("direct", "authenticate"),
];

pub fn style_instruction(style: Style) -> &'static str {
    match style {
        Style::Official => {
            "Write like an official notice from an authority: formal, precise, citing the verified facts."
        }
        Style::Friendly => "Write like a friend explaining over a chat: warm, plain words, no lecturing.",
        Style::Educational => {
            "Write like a teacher: explain how to recognise this kind of claim and what the evidence shows."
        }
        Style::Logical => {
            "Write as a step-by-step argument: state the claim, the evidence, and the conclusion that follows."
        }
        Style::Direct => "Be blunt and brief: state the verdict first, then the single most important fact.",
        Style::None => "",
    }
}

/// Prompt templates, one per (style, stance) pair, with named placeholders
/// `{news_text}`, `{related}`, `{existing}`, `{style_instruction}` and `{style}`.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

fn template_name(style: Style, stance: Stance) -> String {
    format!("{}_{}", style.as_str(), stance.as_str())
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Loads `<style>_<stance>.txt` for every style/stance pair from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for style in Style::AUGMENTATION {
            for stance in [Stance::Refute, Stance::Authenticate] {
                let name = template_name(style, stance);
                let path = dir.join(format!("{name}.txt"));
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| Error::PromptTemplateMissing(path.display().to_string()))?;
                templates.insert(name, text);
            }
        }
        Ok(Self { templates })
    }

    pub fn render(
        &self,
        style: Style,
        stance: Stance,
        news_text: &str,
        related: &[String],
        existing: &[String],
    ) -> Result<String> {
        let name = template_name(style, stance);
        let template = self.templates.get(&name).ok_or(Error::PromptTemplateMissing(name))?;
        let bullet = |xs: &[String]| {
            if xs.is_empty() {
                "(none)".to_string()
            } else {
                xs.iter().map(|x| format!("- {x}")).collect::<Vec<_>>().join("\n")
            }
        };
        Ok(template
            .replace("{style_instruction}", style_instruction(style))
            .replace("{style}", style.as_str())
            .replace("{news_text}", news_text)
            .replace("{related}", &bullet(related))
            .replace("{existing}", &bullet(existing)))
    }

    pub fn placeholders() -> &'static [&'static str] {
        &PLACEHOLDERS
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRequest {
    pub item_id: String,
    pub news_text: String,
    pub related_news: Vec<String>,
    pub existing_debunks: Vec<String>,
    pub style: Style,
    pub stance: Stance,
}

impl AugmentationRequest {
    pub fn for_item(item: &NewsItem, related: &[&NewsItem], style: Style) -> Result<Self> {
        if !Style::AUGMENTATION.contains(&style) {
            return Err(Error::Config(format!(
                "augmentation style must be one of the five styles, got {}",
                style.as_str()
            )));
        }
        Ok(Self {
            item_id: item.id.clone(),
            news_text: item.full_text(),
            related_news: related.iter().map(|r| r.claim_text()).collect(),
            existing_debunks: item.ground_truth_debunks().map(|d| d.body.clone()).collect(),
            style,
            stance: item.label.stance(),
        })
    }
}

/// One line of `augmented_debunks.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub item_id: String,
    pub style: Style,
    pub stance: Stance,
    pub body: String,
    pub backend_id: String,
    pub prompt_hash: String,
}

impl AugmentedRecord {
    pub fn debunk_text(&self) -> DebunkText {
        DebunkText {
            body: self.body.clone(),
            source: DebunkSource::LlmAugmented,
            style: self.style,
            stance: self.stance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub templates: PromptTemplates,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::builtin(),
            max_retries: DEFAULT_MAX_RETRIES,
            seed: 0,
        }
    }
}

fn call_seed(base: u64, item_id: &str, style: Style) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(item_id.as_bytes());
    h.update(style.as_str().as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Generates one augmented debunk text per requested style. The corpus is not
/// touched; callers persist the records to the sidecar.
pub fn augment_item(
    item: &NewsItem,
    related: &[&NewsItem],
    client: &dyn LlmClient,
    styles: &[Style],
    options: &AugmentOptions,
    log: &TranscriptLog,
) -> Result<Vec<AugmentedRecord>> {
    if styles.is_empty() {
        return Err(Error::Config("no augmentation styles requested".into()));
    }
    if item.full_text().is_empty() {
        return Err(Error::Config(format!("item {} has no text to augment", item.id)));
    }
    styles
        .iter()
        .map(|&style| {
            let req = AugmentationRequest::for_item(item, related, style)?;
            let prompt = options.templates.render(
                style,
                req.stance,
                &req.news_text,
                &req.related_news,
                &req.existing_debunks,
            )?;
            let stage = format!("augment:{}", style.as_str());
            let resp = generate_with_retry(
                client,
                LlmRequest {
                    item_id: &item.id,
                    stage: &stage,
                    prompt: &prompt,
                    attachments: &[],
                    seed: call_seed(options.seed, &item.id, style),
                    attempt: 0,
                },
                options.max_retries,
                log,
            )?;
            Ok(AugmentedRecord {
                item_id: item.id.clone(),
                style,
                stance: req.stance,
                body: resp.text.trim().to_string(),
                backend_id: client.backend_id().to_string(),
                prompt_hash: prompt_hash(&prompt),
            })
        })
        .collect()
}

/// Augments every item with at most `concurrency` requests in flight. Output
/// order follows corpus order regardless of completion order.
pub fn augment_corpus(
    corpus: &Corpus,
    client: &dyn LlmClient,
    styles: &[Style],
    options: &AugmentOptions,
    log: &TranscriptLog,
    concurrency: usize,
) -> Result<Vec<AugmentedRecord>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_item: Vec<Result<Vec<AugmentedRecord>>> = pool.install(|| {
        corpus
            .items()
            .par_iter()
            .map(|item| augment_item(item, &corpus.related(item), client, styles, options, log))
            .collect()
    });
    let mut out = Vec::new();
    for r in per_item {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_sidecar(path: &Path, records: &[AugmentedRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, Vec<DebunkText>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, Vec<DebunkText>> = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AugmentedRecord = serde_json::from_str(&line)?;
        out.entry(rec.item_id.clone()).or_default().push(rec.debunk_text());
    }
    Ok(out)
}

/// Picks exactly `target` debunk texts: ground truth first (the `target`
/// longest when there are more, kept in pool order), then augmented texts drawn
/// uniformly without replacement.
pub fn hybrid_sample<R: Rng + ?Sized>(pool: &[DebunkText], target: usize, rng: &mut R) -> Result<Vec<DebunkText>> {
    let mut truth: Vec<(usize, &DebunkText)> = pool
        .iter()
        .enumerate()
        .filter(|(_, d)| d.source == DebunkSource::GroundTruth)
        .collect();
    let augmented: Vec<&DebunkText> = pool.iter().filter(|d| d.source == DebunkSource::LlmAugmented).collect();
    let available = truth.len().min(target) + augmented.len();
    if available < target {
        return Err(Error::InsufficientPool { available, target });
    }
    if truth.len() > target {
        truth.sort_by(|a, b| {
            b.1.body
                .chars()
                .count()
                .cmp(&a.1.body.chars().count())
                .then(a.0.cmp(&b.0))
        });
        truth.truncate(target);
        truth.sort_by_key(|(i, _)| *i);
    }
    let mut out: Vec<DebunkText> = truth.into_iter().map(|(_, d)| d.clone()).collect();
    let need = target - out.len();
    out.extend(augmented.choose_multiple(rng, need).map(|d| (*d).clone()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tests::item, Label};
    use crate::llm::MockLlm;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(body: &str) -> DebunkText {
        DebunkText::ground_truth(body, Stance::Refute)
    }

    fn aug(body: &str, style: Style) -> DebunkText {
        DebunkText {
            body: body.into(),
            source: DebunkSource::LlmAugmented,
            style,
            stance: Stance::Refute,
        }
    }

    fn five_aug() -> Vec<DebunkText> {
        Style::AUGMENTATION
            .iter()
            .map(|&s| aug(&format!("aug {}", s.as_str()), s))
            .collect()
    }

    #[test]
    fn mock_echo_yields_one_text_per_style() {
        let it = item("a", "e", 1, Label::Fake);
        let log = TranscriptLog::memory();
        let out = augment_item(
            &it,
            &[],
            &MockLlm::echo(),
            &Style::AUGMENTATION,
            &AugmentOptions::default(),
            &log,
        )
        .unwrap();
        assert_eq!(out.len(), 5);
        for (rec, style) in out.iter().zip(Style::AUGMENTATION) {
            assert_eq!(rec.style, style);
            assert!(rec.body.contains(&format!("Style: {}", style.as_str())));
            assert_eq!(rec.debunk_text().source, DebunkSource::LlmAugmented);
        }
    }

    #[test]
    fn real_items_get_authenticating_texts() {
        let it = item("r", "e", 1, Label::Real);
        let log = TranscriptLog::memory();
        let out = augment_item(
            &it,
            &[],
            &MockLlm::echo(),
            &Style::AUGMENTATION,
            &AugmentOptions::default(),
            &log,
        )
        .unwrap();
        assert!(out.iter().all(|r| r.stance == Stance::Authenticate));
        assert!(log.entries()[0].prompt.contains("verified as TRUE"));
    }

    #[test]
    fn fixed_seed_runs_identical() {
        let it = item("a", "e", 1, Label::Fake);
        let run = || {
            let log = TranscriptLog::memory();
            augment_item(
                &it,
                &[],
                &MockLlm::echo(),
                &Style::AUGMENTATION,
                &AugmentOptions::default(),
                &log,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prompt_carries_context() {
        let mut it = item("a", "e", 1, Label::Fake);
        it.debunk_texts.push(gt("police denied the report"));
        let rel = item("b", "e", 2, Label::Fake);
        let log = TranscriptLog::memory();
        augment_item(
            &it,
            &[&rel],
            &MockLlm::echo(),
            &[Style::Logical],
            &AugmentOptions::default(),
            &log,
        )
        .unwrap();
        let prompt = &log.entries()[0].prompt;
        assert!(prompt.contains("title of a"));
        assert!(prompt.contains("- title of b"));
        assert!(prompt.contains("- police denied the report"));
        assert!(prompt.contains(style_instruction(Style::Logical)));
        for p in PromptTemplates::placeholders() {
            assert!(!prompt.contains(p));
        }
    }

    #[test]
    fn empty_responses_fail_after_retries() {
        let it = item("a", "e", 1, Label::Fake);
        let log = TranscriptLog::memory();
        let m = MockLlm::with_handler("blank", |_| Ok(String::new()));
        let err = augment_item(&it, &[], &m, &[Style::Direct], &AugmentOptions::default(), &log).unwrap_err();
        assert!(matches!(err, Error::LlmFailure { attempts: 4, .. }));
    }

    #[test]
    fn rejects_none_style_and_missing_templates() {
        let it = item("a", "e", 1, Label::Fake);
        let log = TranscriptLog::memory();
        assert!(augment_item(
            &it,
            &[],
            &MockLlm::echo(),
            &[Style::None],
            &AugmentOptions::default(),
            &log
        )
        .is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            PromptTemplates::load_dir(dir.path()),
            Err(Error::PromptTemplateMissing(_))
        ));
    }

    #[test]
    fn sidecar_roundtrip_and_corpus_untouched() {
        let corpus = Corpus::new(vec![item("a", "e", 1, Label::Fake), item("b", "e", 2, Label::Real)]).unwrap();
        let before = corpus.items().to_vec();
        let log = TranscriptLog::memory();
        let recs = augment_corpus(
            &corpus,
            &MockLlm::echo(),
            &Style::AUGMENTATION,
            &AugmentOptions::default(),
            &log,
            2,
        )
        .unwrap();
        assert_eq!(corpus.items(), &before[..]);
        assert_eq!(recs.len(), 10);
        assert_eq!(recs[0].item_id, "a");
        let f = tempfile::NamedTempFile::new().unwrap();
        write_sidecar(f.path(), &recs).unwrap();
        let back = read_sidecar(f.path()).unwrap();
        assert_eq!(back["b"].len(), 5);
        assert!(back["b"].iter().all(|d| d.stance == Stance::Authenticate));
    }

    #[test]
    fn hybrid_two_truths_plus_three() {
        let mut pool = vec![gt("first truth"), gt("second truth")];
        pool.extend(five_aug());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = hybrid_sample(&pool, 5, &mut rng).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0].body, "first truth");
        assert_eq!(out[1].body, "second truth");
        assert!(out[2..].iter().all(|d| d.source == DebunkSource::LlmAugmented));
        let mut bodies: Vec<_> = out[2..].iter().map(|d| &d.body).collect();
        bodies.dedup();
        assert_eq!(bodies.len(), 3);
    }

    #[test]
    fn hybrid_saturated_by_truth() {
        let mut pool: Vec<_> = (0..5).map(|i| gt(&format!("truth {i}"))).collect();
        pool.extend(five_aug());
        let out = hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(out.iter().all(|d| d.source == DebunkSource::GroundTruth));
    }

    #[test]
    fn hybrid_all_augmented() {
        let out = hybrid_sample(&five_aug(), 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn hybrid_keeps_longest_truths() {
        let pool: Vec<_> = ["aaaaaa", "a", "aaaa", "aa", "aaaaa", "aaa", "aaaaaaa"]
            .iter()
            .map(|b| gt(b))
            .collect();
        let out = hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bodies: Vec<_> = out.iter().map(|d| d.body.as_str()).collect();
        assert_eq!(bodies, vec!["aaaaaa", "aaaa", "aaaaa", "aaa", "aaaaaaa"]);
    }

    #[test]
    fn hybrid_insufficient() {
        let pool = vec![gt("x"), aug("y", Style::Direct)];
        assert!(matches!(
            hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientPool {
                available: 2,
                target: 5
            })
        ));
    }

    fn pool_strategy() -> impl Strategy<Value = (usize, usize, u64)> {
        (0usize..9, 0usize..9, any::<u64>()).prop_filter("enough texts", |(g, a, _)| g + a >= 5)
    }

    proptest! {
        #[test]
        fn hybrid_exact_size_and_truth_first((g, a, seed) in pool_strategy()) {
            let mut pool: Vec<_> = (0..g).map(|i| gt(&format!("truth {i}"))).collect();
            pool.extend((0..a).map(|i| aug(&format!("aug {i}"), Style::AUGMENTATION[i % 5])));
            let out = hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), 5);
            let n_truth = out.iter().filter(|d| d.source == DebunkSource::GroundTruth).count();
            prop_assert_eq!(n_truth, g.min(5));
        }

        #[test]
        fn adding_truth_keeps_existing_truth(g in 0usize..4, a in 5usize..8, seed in any::<u64>()) {
            let mut pool: Vec<_> = (0..g).map(|i| gt(&format!("truth {i}"))).collect();
            pool.extend((0..a).map(|i| aug(&format!("aug {i}"), Style::AUGMENTATION[i % 5])));
            let before = hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            pool.push(gt("one more truth"));
            let after = hybrid_sample(&pool, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for d in before.iter().filter(|d| d.source == DebunkSource::GroundTruth) {
                prop_assert!(after.contains(d));
            }
        }
    }
}
