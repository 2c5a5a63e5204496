//! Chain of debunk: keyword extraction, per-modality captioning agents,
//! repeated LLM verification and encoding of the verdict transcript.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, NewsItem};
use crate::encoders::{EncoderInput, EncoderSet, FeatureSeq, Modality};
use crate::error::{Error, Result};
use crate::llm::{generate_with_retry, LlmClient, LlmRequest, TranscriptLog};

pub const UNAVAILABLE: &str = "UNAVAILABLE";
pub const DEFAULT_RUNS: usize = 3;
pub const DEFAULT_KEYFRAMES: usize = 8;

const TEXT_ANALYSIS: &str = include_str!("../prompts/cod/text_analysis.txt");
const VISION_CAPTION: &str = include_str!("../prompts/cod/vision_caption.txt");
const AUDIO_CAPTION: &str = include_str!("../prompts/cod/audio_caption.txt");
const VERIFY: &str = include_str!("../prompts/cod/verify.txt");

/// Named-entity or segmentation backend used for keyword extraction.
pub trait EntityTagger: Send + Sync {
    fn tagger_id(&self) -> &str;

    /// Candidate entity spans, in order of appearance.
    fn tag(&self, title: &str) -> Vec<String>;
}

/// Marks every dictionary term found as a whole word in the title,
/// ignoring case.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTagger {
    terms: Vec<String>,
}

impl DictionaryTagger {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            terms: terms.into_iter().map(Into::into).collect(),
        }
    }
}

impl EntityTagger for DictionaryTagger {
    fn tagger_id(&self) -> &str {
        "dictionary"
    }

    fn tag(&self, title: &str) -> Vec<String> {
        let mut hits: Vec<(usize, String)> = Vec::new();
        for term in self.terms.iter().filter(|t| !t.trim().is_empty()) {
            let Ok(re) = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(term.trim()))) else {
                continue;
            };
            hits.extend(re.find_iter(title).map(|m| (m.start(), m.as_str().to_string())));
        }
        hits.sort_by_key(|(pos, _)| *pos);
        hits.into_iter().map(|(_, s)| s).collect()
    }
}

/// Capitalised spans and numbers, a stand-in for a real NER model.
#[derive(Debug, Clone, Default)]
pub struct CapitalizedTagger;

impl EntityTagger for CapitalizedTagger {
    fn tagger_id(&self) -> &str {
        "capitalized-v1"
    }

    fn tag(&self, title: &str) -> Vec<String> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"\p{Lu}[\p{L}\p{N}'-]*(?:\s+\p{Lu}[\p{L}\p{N}'-]*)*|\p{N}[\p{N}.,]*").expect("valid regex")
        });
        re.find_iter(title).map(|m| m.as_str().to_string()).collect()
    }
}

/// Deduplicated entity list of one title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub entities: Vec<String>,
}

impl KeywordSet {
    pub fn joined(&self) -> String {
        self.entities.join(", ")
    }
}

fn normalize_span(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// Runs the tagger and keeps each normalized span once, first occurrence
/// first. When the tagger finds nothing, the longest title words stand in.
pub fn extract_keywords(title: &str, tagger: &dyn EntityTagger) -> Result<KeywordSet> {
    if title.trim().is_empty() {
        return Err(Error::EmptyTitle);
    }
    fn push(entities: &mut Vec<String>, s: &str) {
        let n = normalize_span(s);
        if !n.is_empty() && !entities.contains(&n) {
            entities.push(n);
        }
    }
    let mut entities: Vec<String> = Vec::new();
    for span in tagger.tag(title) {
        push(&mut entities, &span);
    }
    if entities.is_empty() {
        let mut words: Vec<(usize, &str)> = title
            .split_whitespace()
            .enumerate()
            .filter(|(_, w)| w.chars().any(|c| c.is_alphanumeric()))
            .collect();
        words.sort_by(|a, b| b.1.chars().count().cmp(&a.1.chars().count()).then(a.0.cmp(&b.0)));
        words.truncate(3);
        words.sort_by_key(|(i, _)| *i);
        for (_, w) in words {
            push(&mut entities, w);
        }
    }
    Ok(KeywordSet { entities })
}

/// Prompt templates for the four agents. Placeholders: `{keywords}`,
/// `{text}`, `{extra}`, `{text_analysis}`, `{vision_caption}`, `{audio_caption}`.
#[derive(Debug, Clone)]
pub struct CodPrompts {
    pub text_analysis: String,
    pub vision_caption: String,
    pub audio_caption: String,
    pub verify: String,
}

impl Default for CodPrompts {
    fn default() -> Self {
        Self::builtin()
    }
}

impl CodPrompts {
    pub fn builtin() -> Self {
        Self {
            text_analysis: TEXT_ANALYSIS.into(),
            vision_caption: VISION_CAPTION.into(),
            audio_caption: AUDIO_CAPTION.into(),
            verify: VERIFY.into(),
        }
    }

    /// Reads `text_analysis.txt`, `vision_caption.txt`, `audio_caption.txt`
    /// and `verify.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path).map_err(|_| Error::PromptTemplateMissing(path.display().to_string()))
        };
        let p = Self {
            text_analysis: read("text_analysis")?,
            vision_caption: read("vision_caption")?,
            audio_caption: read("audio_caption")?,
            verify: read("verify")?,
        };
        for (name, t) in [
            ("text_analysis", &p.text_analysis),
            ("vision_caption", &p.vision_caption),
            ("audio_caption", &p.audio_caption),
            ("verify", &p.verify),
        ] {
            if !t.contains("{keywords}") {
                return Err(Error::PromptTemplateMissing(format!("{name} lacks {{keywords}}")));
            }
        }
        if !p.verify.contains("ANSWER:") {
            return Err(Error::PromptTemplateMissing(
                "verify lacks the ANSWER: format line".into(),
            ));
        }
        Ok(p)
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// The LLM backends of the pipeline; vision and audio agents are optional.
#[derive(Clone, Copy)]
pub struct CodAgents<'a> {
    pub text: &'a dyn LlmClient,
    pub vision: Option<&'a dyn LlmClient>,
    pub audio: Option<&'a dyn LlmClient>,
    pub verifier: &'a dyn LlmClient,
}

#[derive(Debug, Clone)]
pub struct CodOptions {
    pub prompts: CodPrompts,
    pub runs: usize,
    pub max_retries: usize,
    pub keyframes: usize,
    pub seed: u64,
}

impl Default for CodOptions {
    fn default() -> Self {
        Self {
            prompts: CodPrompts::builtin(),
            runs: DEFAULT_RUNS,
            max_retries: 3,
            keyframes: DEFAULT_KEYFRAMES,
            seed: 0,
        }
    }
}

fn call_seed(base: u64, item_id: &str, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(item_id.as_bytes());
    h.update([0]);
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// `k` frames at uniform positions `⌊i·n/k⌋`; all frames when `n ≤ k`.
pub fn select_keyframes(frames: &[String], k: usize) -> Vec<String> {
    let n = frames.len();
    if n <= k {
        return frames.to_vec();
    }
    (0..k).map(|i| frames[i * n / k].clone()).collect()
}

/// Frame list behind a keyframe reference: the sorted files of a directory,
/// or a comma-separated list of paths.
pub fn keyframe_list(reference: &str) -> Vec<String> {
    let path = Path::new(reference);
    if path.is_dir() {
        let mut files: Vec<String> = std::fs::read_dir(path)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| e.path().is_file())
                    .map(|e| e.path().display().to_string())
                    .collect()
            })
            .unwrap_or_default();
        files.sort();
        return files;
    }
    reference
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Captions {
    pub text_analysis: String,
    pub vision_caption: String,
    pub audio_caption: String,
}

struct Call<'a> {
    item_id: &'a str,
    stage: &'a str,
    prompt: &'a str,
    attachments: &'a [String],
}

fn call(client: &dyn LlmClient, c: Call<'_>, options: &CodOptions, log: &TranscriptLog) -> Result<String> {
    let resp = generate_with_retry(
        client,
        LlmRequest {
            item_id: c.item_id,
            stage: c.stage,
            prompt: c.prompt,
            attachments: c.attachments,
            seed: call_seed(options.seed, c.item_id, c.stage),
            attempt: 0,
        },
        options.max_retries,
        log,
    )?;
    Ok(resp.text.trim().to_string())
}

fn caption_or_sentinel(result: Result<String>, stage: &str, item_id: &str) -> Result<String> {
    match result {
        Ok(s) => Ok(s),
        Err(e @ Error::LlmFailure { .. }) => {
            log::warn!("{stage} failed for {item_id}, using {UNAVAILABLE}: {e}");
            Ok(UNAVAILABLE.to_string())
        }
        Err(e) => Err(e),
    }
}

/// Produces `(I_t, I_v, I_a)`. Missing agents or media, and agents that keep
/// failing after retries, yield the `UNAVAILABLE` sentinel.
pub fn run_captioning(
    item: &NewsItem,
    agents: &CodAgents<'_>,
    keywords: &KeywordSet,
    options: &CodOptions,
    log: &TranscriptLog,
) -> Result<Captions> {
    let kw = keywords.joined();
    let text = item.claim_text();
    let p = &options.prompts;
    let prompt = fill(&p.text_analysis, &[("keywords", &kw), ("text", &text)]);
    let text_analysis = caption_or_sentinel(
        call(
            agents.text,
            Call {
                item_id: &item.id,
                stage: "cod:text",
                prompt: &prompt,
                attachments: &[],
            },
            options,
            log,
        ),
        "cod:text",
        &item.id,
    )?;

    let vision_caption = match (agents.vision, &item.media.keyframes) {
        (Some(client), Some(reference)) => {
            let frames = select_keyframes(&keyframe_list(reference), options.keyframes);
            let prompt = fill(&p.vision_caption, &[("keywords", &kw)]);
            caption_or_sentinel(
                call(
                    client,
                    Call {
                        item_id: &item.id,
                        stage: "cod:vision",
                        prompt: &prompt,
                        attachments: &frames,
                    },
                    options,
                    log,
                ),
                "cod:vision",
                &item.id,
            )?
        }
        _ => UNAVAILABLE.to_string(),
    };

    let audio_caption = match (agents.audio, &item.media.audio) {
        (Some(client), Some(path)) => {
            let prompt = fill(&p.audio_caption, &[("keywords", &kw)]);
            let attachments = [path.clone()];
            caption_or_sentinel(
                call(
                    client,
                    Call {
                        item_id: &item.id,
                        stage: "cod:audio",
                        prompt: &prompt,
                        attachments: &attachments,
                    },
                    options,
                    log,
                ),
                "cod:audio",
                &item.id,
            )?
        }
        _ => UNAVAILABLE.to_string(),
    };

    Ok(Captions {
        text_analysis,
        vision_caption,
        audio_caption,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Real,
    Fake,
    Uncertain,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Real => "REAL",
            Verdict::Fake => "FAKE",
            Verdict::Uncertain => "UNCERTAIN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodRun {
    pub verdict: Verdict,
    pub rationale: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

impl CodRun {
    /// Text handed to the encoder for this run.
    pub fn serialized(&self) -> String {
        format!("VERDICT: {} RATIONALE: {}", self.verdict.as_str(), self.rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodRecord {
    pub item_id: String,
    pub keywords: KeywordSet,
    pub text_analysis: String,
    pub vision_caption: String,
    pub audio_caption: String,
    pub runs: Vec<CodRun>,
}

impl CodRecord {
    /// Most frequent verdict; ties give `UNCERTAIN`.
    pub fn majority(&self) -> Verdict {
        majority_vote(self.runs.iter().map(|r| r.verdict))
    }
}

pub fn majority_vote(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut counts: BTreeMap<Verdict, usize> = BTreeMap::new();
    for v in verdicts {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    let leaders: Vec<Verdict> = counts.iter().filter(|(_, &c)| c == best).map(|(v, _)| *v).collect();
    match leaders.as_slice() {
        [one] => *one,
        _ => Verdict::Uncertain,
    }
}

/// Reads the `ANSWER: REAL|FAKE` tag from the first non-empty line. Without a
/// tag the verdict is `UNCERTAIN` and the whole response is the rationale.
pub fn parse_verdict(response: &str) -> (Verdict, String) {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)^\s*answer\s*:\s*(real|fake)\b").expect("valid regex"));
    let raw = response.trim();
    let mut lines = raw.lines().skip_while(|l| l.trim().is_empty());
    let first = lines.next().unwrap_or("");
    match re.captures(first) {
        Some(c) => {
            let verdict = if c[1].eq_ignore_ascii_case("real") {
                Verdict::Real
            } else {
                Verdict::Fake
            };
            let rest = first[c.get(0).map_or(0, |m| m.end())..].trim();
            let mut rationale: Vec<&str> = Vec::new();
            if !rest.is_empty() {
                rationale.push(rest);
            }
            rationale.extend(lines.map(str::trim).filter(|l| !l.is_empty()));
            let rationale = rationale.join("\n");
            (
                verdict,
                if rationale.is_empty() {
                    raw.to_string()
                } else {
                    rationale
                },
            )
        }
        None => (Verdict::Uncertain, raw.to_string()),
    }
}

/// The text block the verifier sees besides the captions: comments and the
/// publisher profile.
fn extra_information(item: &NewsItem) -> String {
    let mut parts = Vec::new();
    if !item.comments.is_empty() {
        parts.push(format!("Comments: {}", item.comments.join(" | ")));
    }
    if !item.publisher_profile.trim().is_empty() {
        parts.push(format!("Publisher: {}", item.publisher_profile.trim()));
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("\n")
    }
}

/// `options.runs` independent verification calls. Any run that still fails
/// after retries aborts the whole record.
pub fn verify(
    item: &NewsItem,
    captions: &Captions,
    keywords: &KeywordSet,
    client: &dyn LlmClient,
    options: &CodOptions,
    log: &TranscriptLog,
) -> Result<CodRecord> {
    if options.runs == 0 {
        return Err(Error::Config("cod runs must be at least 1".into()));
    }
    let kw = keywords.joined();
    let text = item.claim_text();
    let extra = extra_information(item);
    let prompt = fill(
        &options.prompts.verify,
        &[
            ("keywords", &kw),
            ("text", &text),
            ("extra", &extra),
            ("text_analysis", &captions.text_analysis),
            ("vision_caption", &captions.vision_caption),
            ("audio_caption", &captions.audio_caption),
        ],
    );
    let mut runs = Vec::with_capacity(options.runs);
    for i in 0..options.runs {
        let stage = format!("cod:verify:{i}");
        let resp = generate_with_retry(
            client,
            LlmRequest {
                item_id: &item.id,
                stage: &stage,
                prompt: &prompt,
                attachments: &[],
                seed: call_seed(options.seed, &item.id, &stage),
                attempt: 0,
            },
            options.max_retries,
            log,
        )?;
        let (verdict, rationale) = parse_verdict(&resp.text);
        runs.push(CodRun {
            verdict,
            rationale,
            latency_ms: resp.latency_ms,
            backend_id: client.backend_id().to_string(),
        });
    }
    Ok(CodRecord {
        item_id: item.id.clone(),
        keywords: keywords.clone(),
        text_analysis: captions.text_analysis.clone(),
        vision_caption: captions.vision_caption.clone(),
        audio_caption: captions.audio_caption.clone(),
        runs,
    })
}

/// Keywords, captions and verification for one item.
pub fn run_cod(
    item: &NewsItem,
    tagger: &dyn EntityTagger,
    agents: &CodAgents<'_>,
    options: &CodOptions,
    log: &TranscriptLog,
) -> Result<CodRecord> {
    let keywords = extract_keywords(&item.title, tagger)?;
    let captions = run_captioning(item, agents, &keywords, options, log)?;
    verify(item, &captions, &keywords, agents.verifier, options, log)
}

/// Runs the pipeline for every item with at most `concurrency` items in
/// flight; output follows corpus order.
pub fn run_cod_corpus(
    corpus: &Corpus,
    tagger: &dyn EntityTagger,
    agents: &CodAgents<'_>,
    options: &CodOptions,
    log: &TranscriptLog,
    concurrency: usize,
) -> Result<Vec<CodRecord>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        corpus
            .items()
            .par_iter()
            .map(|item| run_cod(item, tagger, agents, options, log))
            .collect()
    })
}

/// Encodes every run and averages the encodings. Runs of different lengths
/// are aligned at the first row; each output row averages the runs that reach it.
pub fn encode_cod(record: &CodRecord, encoders: &EncoderSet, expected_runs: usize) -> Result<FeatureSeq> {
    if record.runs.len() != expected_runs || expected_runs == 0 {
        return Err(Error::IncompleteRecord {
            item_id: record.item_id.clone(),
            runs: record.runs.len(),
            expected: expected_runs,
        });
    }
    let seqs = record
        .runs
        .iter()
        .map(|r| encoders.encode(Modality::CodText, EncoderInput::Text(&r.serialized())))
        .collect::<Result<Vec<_>>>()?;
    if seqs.iter().all(|s| s.rows() == seqs[0].rows()) {
        return FeatureSeq::mean_of(&seqs);
    }
    let dim = seqs[0].dim();
    let rows = seqs.iter().map(FeatureSeq::rows).max().unwrap_or(0);
    let mut data = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        let present: Vec<&FeatureSeq> = seqs.iter().filter(|s| s.rows() > r).collect();
        let n = present.len() as f64;
        for j in 0..dim {
            data.push((present.iter().map(|s| s.row(r)[j] as f64).sum::<f64>() / n) as f32);
        }
    }
    FeatureSeq::new(data, rows, dim, Modality::CodText, seqs[0].encoder_id.clone())
}

pub fn write_records(path: &Path, records: &[CodRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<CodRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
