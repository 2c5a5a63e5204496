//! Reads a JSONL manifest and cuts it two ways: a chronological 70/15/15
//! holdout and five event-disjoint folds.

use std::io::Write;

use difnd::corpus::{chronological_split, event_disjoint_folds, ingest_manifest, ManifestFormat, SplitKind};

fn main() -> anyhow::Result<()> {
    let mut manifest = tempfile::NamedTempFile::new()?;
    for i in 0..20 {
        let (label, stance) = if i % 3 == 0 {
            ("fake", "refute")
        } else {
            ("real", "authenticate")
        };
        writeln!(
            manifest,
            r#"{{"id":"v{i:02}","title":"Storm hits Harbor Town {i}","transcript":"reporter on site","comments":["wow"],"publisher":"daily","event_id":"storm-{}","published_at":{},"label":"{label}","debunk":[{{"body":"checked by the desk","stance":"{stance}"}}]}}"#,
            i % 6,
            1_700_000_000 + 3600 * i
        )?;
    }
    let corpus = ingest_manifest(manifest.path(), ManifestFormat::Jsonl)?;
    println!("{} items, classes {:?}", corpus.len(), corpus.class_counts());

    let plan = chronological_split(&corpus, (0.7, 0.15, 0.15))?;
    if let SplitKind::Holdout { train, val, test } = &plan.kind {
        println!(
            "chronological: {} train, {} val, {} test",
            train.len(),
            val.len(),
            test.len()
        );
        println!(
            "  last train item {}, first test item {}",
            train.last().unwrap(),
            test[0]
        );
    }
    let folds = event_disjoint_folds(&corpus, 5)?;
    for v in 0..folds.num_views() {
        let view = folds.view(v)?;
        let mut events: Vec<&str> = view
            .test
            .iter()
            .filter_map(|id| corpus.get(id).map(|i| i.event_id.as_str()))
            .collect();
        events.sort();
        events.dedup();
        println!("fold {v}: {} test items from events {events:?}", view.test.len());
    }
    Ok(())
}
