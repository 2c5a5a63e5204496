//! Style-conditioned augmentation of debunk texts with a mock backend, then
//! hybrid sampling: ground truth first, augmented texts to fill up to five.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use difnd::augment::{augment_item, hybrid_sample, AugmentOptions, DEFAULT_TARGET};
use difnd::corpus::{DebunkText, Style};
use difnd::llm::TranscriptLog;
use difnd::synth::{generate, mock_augmenter, SynthConfig};

fn main() -> anyhow::Result<()> {
    let synth = generate(&SynthConfig {
        items: 12,
        ..SynthConfig::default()
    })?;
    let corpus = &synth.corpus;
    let item = &corpus.items()[0];
    let client = mock_augmenter(corpus);
    let log = TranscriptLog::memory();
    let records = augment_item(
        item,
        &corpus.related(item),
        &client,
        &Style::AUGMENTATION,
        &AugmentOptions::default(),
        &log,
    )?;
    println!("{} ({}):", item.id, item.label.as_str());
    for r in &records {
        println!("  [{}] {}", r.style.as_str(), r.body);
    }
    println!("{} transcript entries", log.entries().len());

    let mut pool: Vec<DebunkText> = item.ground_truth_debunks().cloned().collect();
    pool.extend(records.iter().map(|r| r.debunk_text()));
    let picked = hybrid_sample(&pool, DEFAULT_TARGET, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("hybrid sample of {} from a pool of {}:", picked.len(), pool.len());
    for d in &picked {
        println!("  {:?} {}", d.source, d.body);
    }
    Ok(())
}
