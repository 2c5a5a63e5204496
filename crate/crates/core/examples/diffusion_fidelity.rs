//! Trains the full model on the generated corpus and checks where sampled
//! debunk latents land: nearest label centroid of the compressed training
//! debunk texts, for train and test items.

use difnd::corpus::{chronological_split, Label};
use difnd::harness::{evaluate, fidelity, train};
use difnd::synth::{generate, preprocess, train_config, SynthConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let synth = generate(&SynthConfig::default())?;
    let pipeline = preprocess(&synth, 4)?;
    let view = chronological_split(&synth.corpus, (0.7, 0.15, 0.15))?.view(0)?;
    let out = train(&pipeline.table, &view, &train_config())?;
    let test = evaluate(&out.model, &pipeline.table, &view.test)?;
    println!("test accuracy {:.3} (best epoch {:?})", test.accuracy, out.best_epoch);

    // A miss on an item whose comment cue reads the wrong way is expected:
    // the sampler only sees the item's own modalities.
    let flipped = |id: &String| {
        let fake = synth.corpus.get(id).map(|i| i.label == Label::Fake).unwrap_or(false);
        synth.planted[id].comment_fake != fake
    };
    for (name, ids) in [("train", &view.train), ("test", &view.test)] {
        let f = fidelity(&out.model, &pipeline.table, &view.train, ids)?;
        println!(
            "{name:<5} fidelity {:.3} over {} (reference {:.3}); {} misses, {} on flipped cues",
            f.accuracy,
            f.n,
            f.reference_accuracy,
            f.misses.len(),
            f.misses.iter().filter(|id| flipped(id)).count()
        );
    }
    Ok(())
}
