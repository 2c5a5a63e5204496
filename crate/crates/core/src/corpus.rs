//! News-item data model, JSONL manifest ingest and train/val/test splitting.
//!
//! A [`Corpus`] holds the labeled classifier rows. Debunk-only material (videos
//! that exist purely to refute or confirm a claim) lives in a separate pool keyed
//! by event and is attached to the classifier rows of that event as ground-truth
//! debunk texts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index used by every classifier head: 0 = REAL, 1 = FAKE.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }

    pub fn stance(self) -> Stance {
        match self {
            Label::Fake => Stance::Refute,
            Label::Real => Stance::Authenticate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "REAL",
            Label::Fake => "FAKE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebunkSource {
    GroundTruth,
    LlmAugmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Official,
    Friendly,
    Educational,
    Logical,
    Direct,
    None,
}

impl Style {
    /// The five rhetorical styles used for augmentation.
    pub const AUGMENTATION: [Style; 5] = [
        Style::Official,
        Style::Friendly,
        Style::Educational,
        Style::Logical,
        Style::Direct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Official => "official",
            Style::Friendly => "friendly",
            Style::Educational => "educational",
            Style::Logical => "logical",
            Style::Direct => "direct",
            Style::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Style> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "official" => Style::Official,
            "friendly" => Style::Friendly,
            "educational" => Style::Educational,
            "logical" => Style::Logical,
            "direct" => Style::Direct,
            "none" => Style::None,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Refute,
    Authenticate,
}

impl Stance {
    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Refute => "refute",
            Stance::Authenticate => "authenticate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebunkText {
    pub body: String,
    pub source: DebunkSource,
    pub style: Style,
    pub stance: Stance,
}

impl DebunkText {
    pub fn ground_truth(body: impl Into<String>, stance: Stance) -> Self {
        Self {
            body: body.into(),
            source: DebunkSource::GroundTruth,
            style: Style::None,
            stance,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match (self.source, self.style) {
            (DebunkSource::GroundTruth, Style::None) => Ok(()),
            (DebunkSource::GroundTruth, s) => Err(format!(
                "ground-truth debunk text must have style none, got {}",
                s.as_str()
            )),
            (DebunkSource::LlmAugmented, Style::None) => {
                Err("augmented debunk text needs one of the five styles".into())
            }
            (DebunkSource::LlmAugmented, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Media {
    #[serde(default)]
    pub keyframes: Option<String>,
    #[serde(default)]
    pub audio: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub title: String,
    pub on_screen_text: String,
    pub transcript: String,
    pub comments: Vec<String>,
    pub publisher_profile: String,
    pub event_id: String,
    pub published_at: i64,
    pub label: Label,
    pub debunk_texts: Vec<DebunkText>,
    pub media: Media,
    /// Modality name to feature-cache key, filled in by feature extraction.
    pub feature_refs: BTreeMap<String, String>,
}

impl NewsItem {
    /// Title plus on-screen text: the textual claim of the video.
    pub fn claim_text(&self) -> String {
        join_nonempty(&[&self.title, &self.on_screen_text])
    }

    /// Everything textual the item carries, in a fixed order.
    pub fn full_text(&self) -> String {
        let comments = self.comments.join(" ");
        join_nonempty(&[&self.title, &self.on_screen_text, &self.transcript, &comments])
    }

    pub fn ground_truth_debunks(&self) -> impl Iterator<Item = &DebunkText> {
        self.debunk_texts
            .iter()
            .filter(|d| d.source == DebunkSource::GroundTruth)
    }
}

pub(crate) fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Immutable collection of labeled news items plus the per-event debunk pool.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Corpus {
    items: Vec<NewsItem>,
    debunk_pool: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(items: Vec<NewsItem>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            validate_item(item, pos + 1)?;
            if index.insert(item.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId {
                    id: item.id.clone(),
                    line: pos + 1,
                });
            }
        }
        Ok(Self {
            items,
            debunk_pool: BTreeMap::new(),
            index,
        })
    }

    pub fn items(&self) -> &[NewsItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn debunk_pool(&self) -> &BTreeMap<String, Vec<String>> {
        &self.debunk_pool
    }

    /// Other items reporting on the same event.
    pub fn related(&self, item: &NewsItem) -> Vec<&NewsItem> {
        self.items
            .iter()
            .filter(|o| o.event_id == item.event_id && o.id != item.id)
            .collect()
    }

    /// Attaches debunk-only bodies to every classifier item of the same event as
    /// ground-truth debunk texts whose stance follows the item's label.
    pub fn attach_debunk_pool(&mut self, pool: BTreeMap<String, Vec<String>>) {
        for item in &mut self.items {
            if let Some(bodies) = pool.get(&item.event_id) {
                let stance = item.label.stance();
                for body in bodies {
                    let exists = item.debunk_texts.iter().any(|d| &d.body == body);
                    if !exists {
                        item.debunk_texts.push(DebunkText::ground_truth(body.clone(), stance));
                    }
                }
            }
        }
        for (event, bodies) in pool {
            self.debunk_pool.entry(event).or_default().extend(bodies);
        }
    }

    /// Returns a copy with `f` applied to every item. Ids must stay unique.
    pub fn map_items(&self, mut f: impl FnMut(&mut NewsItem)) -> Result<Corpus> {
        let mut items = self.items.clone();
        items.iter_mut().for_each(&mut f);
        let mut out = Corpus::new(items)?;
        out.debunk_pool = self.debunk_pool.clone();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        bincode::serialize_into(BufWriter::new(file), self)
            .map_err(|e| Error::Config(format!("cannot write corpus: {e}")))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: Corpus = bincode::deserialize_from(BufReader::new(file))
            .map_err(|e| Error::Config(format!("cannot read corpus {}: {e}", path.display())))?;
        let pool = raw.debunk_pool;
        let mut corpus = Corpus::new(raw.items)?;
        corpus.debunk_pool = pool;
        Ok(corpus)
    }
}

fn validate_item(item: &NewsItem, line: usize) -> Result<()> {
    let invalid = |reason: String| Error::InvalidRecord {
        record: item.id.clone(),
        line,
        reason,
    };
    if item.id.is_empty() {
        return Err(Error::MissingField {
            record: String::new(),
            line,
            field: "id",
        });
    }
    if item.event_id.is_empty() {
        return Err(Error::MissingField {
            record: item.id.clone(),
            line,
            field: "event_id",
        });
    }
    if item.published_at < 0 {
        return Err(invalid(format!(
            "published_at must be non-negative, got {}",
            item.published_at
        )));
    }
    for d in &item.debunk_texts {
        d.check().map_err(&invalid)?;
        if d.stance != item.label.stance() {
            return Err(invalid(format!(
                "debunk stance {} does not match label {}",
                d.stance.as_str(),
                item.label.as_str()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ManifestRecord {
    id: Option<String>,
    title: Option<String>,
    #[serde(default)]
    ocr: String,
    #[serde(default)]
    transcript: String,
    #[serde(default)]
    comments: Vec<String>,
    #[serde(default)]
    publisher: String,
    event_id: Option<String>,
    published_at: Option<i64>,
    label: Option<String>,
    #[serde(default)]
    debunk: Vec<ManifestDebunk>,
    #[serde(default)]
    media: Media,
}

#[derive(Debug, Deserialize)]
struct ManifestDebunk {
    body: String,
    #[serde(default = "default_source")]
    source: DebunkSource,
    #[serde(default = "default_style")]
    style: Style,
    stance: Option<Stance>,
}

fn default_source() -> DebunkSource {
    DebunkSource::GroundTruth
}

fn default_style() -> Style {
    Style::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    Jsonl,
}

/// Reads a JSONL manifest, one news item per non-blank line.
pub fn ingest_manifest(path: &Path, format: ManifestFormat) -> Result<Corpus> {
    let ManifestFormat::Jsonl = format;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_record(&line, line_no)?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::DuplicateId {
                id: item.id,
                line: line_no,
            });
        }
        items.push(item);
    }
    Corpus::new(items)
}

fn parse_record(line: &str, line_no: usize) -> Result<NewsItem> {
    let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::InvalidRecord {
        record: String::new(),
        line: line_no,
        reason: e.to_string(),
    })?;
    let id = rec.id.filter(|s| !s.is_empty()).ok_or(Error::MissingField {
        record: String::new(),
        line: line_no,
        field: "id",
    })?;
    let missing = |field| Error::MissingField {
        record: id.clone(),
        line: line_no,
        field,
    };
    let title = rec.title.ok_or_else(|| missing("title"))?;
    let event_id = rec
        .event_id
        .filter(|s| !s.is_empty())
        .ok_or_else(|| missing("event_id"))?;
    let published_at = rec.published_at.ok_or_else(|| missing("published_at"))?;
    let label_raw = rec.label.ok_or_else(|| missing("label"))?;
    let label = match label_raw.to_ascii_lowercase().as_str() {
        "fake" => Label::Fake,
        "real" => Label::Real,
        _ => {
            return Err(Error::UnknownLabel {
                record: id,
                line: line_no,
                label: label_raw,
            })
        }
    };
    let debunk_texts = rec
        .debunk
        .into_iter()
        .map(|d| DebunkText {
            body: d.body,
            source: d.source,
            style: d.style,
            stance: d.stance.unwrap_or(label.stance()),
        })
        .collect();
    let item = NewsItem {
        id,
        title,
        on_screen_text: rec.ocr,
        transcript: rec.transcript,
        comments: rec.comments,
        publisher_profile: rec.publisher,
        event_id,
        published_at,
        label,
        debunk_texts,
        media: rec.media,
        feature_refs: BTreeMap::new(),
    };
    validate_item(&item, line_no)?;
    Ok(item)
}

#[derive(Debug, Deserialize)]
struct DebunkRecord {
    event_id: Option<String>,
    #[serde(default)]
    body: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    transcript: String,
}

/// Reads the debunk-only manifest: `{event_id, body}` per line (or `title` and
/// `transcript` when no body is given). Returns bodies grouped by event.
pub fn ingest_debunk_manifest(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pool: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DebunkRecord = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            record: String::new(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let event = rec.event_id.filter(|s| !s.is_empty()).ok_or(Error::MissingField {
            record: String::new(),
            line: lineno + 1,
            field: "event_id",
        })?;
        let body = if rec.body.trim().is_empty() {
            join_nonempty(&[&rec.title, &rec.transcript])
        } else {
            rec.body
        };
        if !body.is_empty() {
            pool.entry(event).or_default().push(body);
        }
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitKind {
    Holdout {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
    Folds {
        folds: Vec<Fold>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub name: String,
    #[serde(flatten)]
    pub kind: SplitKind,
}

/// A single train/validation/test view, either the holdout split or one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitView {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SplitPlan> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Number of train/test views this plan yields.
    pub fn num_views(&self) -> usize {
        match &self.kind {
            SplitKind::Holdout { .. } => 1,
            SplitKind::Folds { folds } => folds.len(),
        }
    }

    /// Fold views have no dedicated validation set; the test fold doubles as
    /// the selection set.
    pub fn view(&self, index: usize) -> Result<SplitView> {
        match &self.kind {
            SplitKind::Holdout { train, val, test } if index == 0 => Ok(SplitView {
                train: train.clone(),
                val: val.clone(),
                test: test.clone(),
            }),
            SplitKind::Folds { folds } if index < folds.len() => Ok(SplitView {
                train: folds[index].train.clone(),
                val: folds[index].test.clone(),
                test: folds[index].test.clone(),
            }),
            _ => Err(Error::InvalidSplit(format!(
                "view {index} out of range ({} views)",
                self.num_views()
            ))),
        }
    }
}

/// Sorts by (published_at, id) and cuts train/val by floor of the ratios;
/// the remainder goes to test.
pub fn chronological_split(corpus: &Corpus, ratios: (f64, f64, f64)) -> Result<SplitPlan> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidSplit(format!("ratios must be positive, got {ratios:?}")));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "ratios must sum to 1, got {}",
            r_train + r_val + r_test
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<&NewsItem> = corpus.items().iter().collect();
    order.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.id.cmp(&b.id)));
    let n = order.len();
    // The epsilon keeps products such as 0.7 * 10 from flooring to 6.
    let n_train = ((r_train * n as f64) + 1e-9).floor() as usize;
    let n_val = ((r_val * n as f64) + 1e-9).floor() as usize;
    let ids: Vec<String> = order.iter().map(|i| i.id.clone()).collect();
    Ok(SplitPlan {
        name: "chronological".into(),
        kind: SplitKind::Holdout {
            train: ids[..n_train].to_vec(),
            val: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        },
    })
}

/// Greedy size-balanced assignment of whole events to `k` test folds: largest
/// event first (ties by event id), each into the currently smallest fold (ties by
/// fold index).
pub fn event_disjoint_folds(corpus: &Corpus, k: usize) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidSplit(format!("k must be at least 2, got {k}")));
    }
    let mut events: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for item in corpus.items() {
        events.entry(&item.event_id).or_default().push(&item.id);
    }
    if events.len() < k {
        return Err(Error::TooFewEvents { k, found: events.len() });
    }
    let mut by_size: Vec<(&str, Vec<&str>)> = events.into_iter().collect();
    by_size.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));

    let mut fold_of_event: HashMap<&str, usize> = HashMap::new();
    let mut sizes = vec![0usize; k];
    for (event, members) in &by_size {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
        sizes[target] += members.len();
        fold_of_event.insert(event, target);
    }

    let folds = (0..k)
        .map(|f| {
            let (test, train): (Vec<&NewsItem>, Vec<&NewsItem>) = corpus
                .items()
                .iter()
                .partition(|item| fold_of_event[item.event_id.as_str()] == f);
            Fold {
                train: train.into_iter().map(|i| i.id.clone()).collect(),
                test: test.into_iter().map(|i| i.id.clone()).collect(),
            }
        })
        .collect();
    Ok(SplitPlan {
        name: format!("event_folds_{k}"),
        kind: SplitKind::Folds { folds },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn item(id: &str, event: &str, ts: i64, label: Label) -> NewsItem {
        NewsItem {
            id: id.into(),
            title: format!("title of {id}"),
            on_screen_text: String::new(),
            transcript: String::new(),
            comments: vec![],
            publisher_profile: String::new(),
            event_id: event.into(),
            published_at: ts,
            label,
            debunk_texts: vec![],
            media: Media::default(),
            feature_refs: BTreeMap::new(),
        }
    }

    fn manifest(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_three_lines() {
        let f = manifest(&[
            r#"{"id":"a","title":"t","event_id":"e1","published_at":1,"label":"fake"}"#,
            r#"{"id":"b","title":"t","event_id":"e1","published_at":2,"label":"real","comments":["x"]}"#,
            r#"{"id":"c","title":"t","event_id":"e2","published_at":3,"label":"real","debunk":[{"body":"confirmed","source":"ground_truth","style":"none","stance":"authenticate"}]}"#,
        ]);
        let corpus = ingest_manifest(f.path(), ManifestFormat::Jsonl).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.get("c").unwrap().debunk_texts.len(), 1);
    }

    #[test]
    fn duplicate_id_names_line() {
        let f = manifest(&[
            r#"{"id":"a","title":"t","event_id":"e1","published_at":1,"label":"fake"}"#,
            r#"{"id":"a","title":"t","event_id":"e1","published_at":2,"label":"fake"}"#,
        ]);
        match ingest_manifest(f.path(), ManifestFormat::Jsonl) {
            Err(Error::DuplicateId { id, line }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_unknown_label() {
        let f = manifest(&[r#"{"id":"a","title":"t","published_at":1,"label":"fake"}"#]);
        assert!(matches!(
            ingest_manifest(f.path(), ManifestFormat::Jsonl),
            Err(Error::MissingField {
                field: "event_id",
                line: 1,
                ..
            })
        ));
        let f = manifest(&[r#"{"id":"q","title":"t","event_id":"e","published_at":1,"label":"satire"}"#]);
        match ingest_manifest(f.path(), ManifestFormat::Jsonl) {
            Err(Error::UnknownLabel { record, label, .. }) => {
                assert_eq!(record, "q");
                assert_eq!(label, "satire");
            }
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn debunk_invariants_enforced() {
        let f = manifest(&[
            r#"{"id":"a","title":"t","event_id":"e","published_at":1,"label":"fake","debunk":[{"body":"b","source":"ground_truth","style":"friendly","stance":"refute"}]}"#,
        ]);
        assert!(matches!(
            ingest_manifest(f.path(), ManifestFormat::Jsonl),
            Err(Error::InvalidRecord { .. })
        ));
        let f = manifest(&[
            r#"{"id":"a","title":"t","event_id":"e","published_at":1,"label":"fake","debunk":[{"body":"b","stance":"authenticate"}]}"#,
        ]);
        assert!(matches!(
            ingest_manifest(f.path(), ManifestFormat::Jsonl),
            Err(Error::InvalidRecord { .. })
        ));
        let f = manifest(&[r#"{"id":"a","title":"t","event_id":"e","published_at":-4,"label":"fake"}"#]);
        assert!(ingest_manifest(f.path(), ManifestFormat::Jsonl).is_err());
    }

    #[test]
    fn fakesv_shaped_class_counts() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..3654 {
            let label = if i % 2 == 0 { "fake" } else { "real" };
            writeln!(
                f,
                r#"{{"id":"v{i}","title":"t{i}","event_id":"e{}","published_at":{i},"label":"{label}"}}"#,
                i / 7
            )
            .unwrap();
        }
        let corpus = ingest_manifest(f.path(), ManifestFormat::Jsonl).unwrap();
        let counts = corpus.class_counts();
        assert_eq!(counts[&Label::Fake], 1827);
        assert_eq!(counts[&Label::Real], 1827);
    }

    #[test]
    fn debunk_pool_attaches_by_event() {
        let mut corpus = Corpus::new(vec![
            item("a", "e1", 1, Label::Fake),
            item("b", "e1", 2, Label::Real),
            item("c", "e2", 3, Label::Fake),
        ])
        .unwrap();
        let mut pool = BTreeMap::new();
        pool.insert("e1".to_string(), vec!["it never happened".to_string()]);
        corpus.attach_debunk_pool(pool);
        assert_eq!(corpus.get("a").unwrap().debunk_texts[0].stance, Stance::Refute);
        assert_eq!(corpus.get("b").unwrap().debunk_texts[0].stance, Stance::Authenticate);
        assert!(corpus.get("c").unwrap().debunk_texts.is_empty());
    }

    fn corpus_n(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| item(&format!("i{i:03}"), &format!("e{}", i % 5), i as i64 + 1, Label::Fake))
                .collect(),
        )
        .unwrap()
    }

    fn sizes(plan: &SplitPlan) -> (usize, usize, usize) {
        match &plan.kind {
            SplitKind::Holdout { train, val, test } => (train.len(), val.len(), test.len()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn chronological_sizes() {
        let plan = chronological_split(&corpus_n(20), (0.7, 0.15, 0.15)).unwrap();
        assert_eq!(sizes(&plan), (14, 3, 3));
        let plan = chronological_split(&corpus_n(7), (0.7, 0.15, 0.15)).unwrap();
        assert_eq!(sizes(&plan), (4, 1, 2));
    }

    #[test]
    fn chronological_order_forced() {
        // Reverse insertion order so sorting actually matters.
        let items: Vec<_> = (1..=10)
            .rev()
            .map(|t| item(&format!("x{t}"), "e", t, Label::Real))
            .collect();
        let corpus = Corpus::new(items).unwrap();
        let plan = chronological_split(&corpus, (0.7, 0.15, 0.15)).unwrap();
        let SplitKind::Holdout { train, .. } = plan.kind else {
            unreachable!()
        };
        let expected: Vec<String> = (1..=7).map(|t| format!("x{t}")).collect();
        let mut got = train.clone();
        got.sort_by_key(|s| s[1..].parse::<i64>().unwrap());
        assert_eq!(got, expected);
    }

    #[test]
    fn chronological_ties_broken_by_id() {
        let corpus = Corpus::new(vec![
            item("b", "e", 5, Label::Real),
            item("a", "e", 5, Label::Real),
            item("c", "e", 5, Label::Real),
        ])
        .unwrap();
        let plan = chronological_split(&corpus, (0.4, 0.3, 0.3)).unwrap();
        let SplitKind::Holdout { train, val, test } = plan.kind else {
            unreachable!()
        };
        assert_eq!(
            (train, val, test),
            (vec!["a".to_string()], vec![], vec!["b".into(), "c".into()])
        );
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(
            chronological_split(&Corpus::default(), (0.7, 0.15, 0.15)),
            Err(Error::EmptyCorpus)
        ));
        assert!(chronological_split(&corpus_n(5), (0.7, 0.2, 0.2)).is_err());
        assert!(chronological_split(&corpus_n(5), (1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn folds_symmetric_events() {
        let items = (0..10)
            .map(|i| item(&format!("i{i}"), &format!("e{}", i / 2), i, Label::Real))
            .collect();
        let plan = event_disjoint_folds(&Corpus::new(items).unwrap(), 5).unwrap();
        let SplitKind::Folds { folds } = plan.kind else {
            unreachable!()
        };
        assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
    }

    #[test]
    fn folds_greedy_balances() {
        let mut items = vec![];
        let mut n = 0;
        for (e, size) in [("e4", 4), ("e3", 3), ("e2", 2), ("e1", 1)] {
            for _ in 0..size {
                items.push(item(&format!("i{n}"), e, n, Label::Fake));
                n += 1;
            }
        }
        let plan = event_disjoint_folds(&Corpus::new(items).unwrap(), 2).unwrap();
        let SplitKind::Folds { folds } = plan.kind else {
            unreachable!()
        };
        let mut got: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        got.sort();
        // Brute force over all 2^4 event assignments: the best achievable max
        // fold size is 5, so {5, 5} is optimal.
        let sizes = [4usize, 3, 2, 1];
        let best = (0u32..16)
            .map(|mask| {
                let a: usize = (0..4).filter(|b| mask >> b & 1 == 1).map(|b| sizes[b]).sum();
                a.max(10 - a)
            })
            .min()
            .unwrap();
        assert_eq!(best, 5);
        assert_eq!(got, vec![5, 5]);
    }

    #[test]
    fn folds_need_enough_events() {
        let corpus = Corpus::new(vec![item("a", "e", 0, Label::Real), item("b", "f", 1, Label::Real)]).unwrap();
        assert!(matches!(
            event_disjoint_folds(&corpus, 3),
            Err(Error::TooFewEvents { k: 3, found: 2 })
        ));
        assert!(event_disjoint_folds(&corpus, 1).is_err());
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let corpus = corpus_n(6);
        let f = tempfile::NamedTempFile::new().unwrap();
        corpus.save(f.path()).unwrap();
        let back = Corpus::load(f.path()).unwrap();
        assert_eq!(back.items(), corpus.items());
        assert!(back.get("i003").is_some());
    }
}
