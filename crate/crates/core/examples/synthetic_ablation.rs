//! Module ablation on the generated corpus: MM-F alone, with debunk diffusion,
//! with chain of debunk, and all three, pooled over five event-disjoint folds.
//!
//! ```text
//! cargo run --release --example synthetic_ablation [-- SEED]
//! ```

use std::time::Instant;

use difnd::config::Module;
use difnd::corpus::event_disjoint_folds;
use difnd::harness::cross_validate;
use difnd::synth::{generate, preprocess, train_config, SynthConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let synth = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let pipeline = preprocess(&synth, 4)?;
    let plan = event_disjoint_folds(&synth.corpus, 5)?;
    let rows: [&[Module]; 4] = [
        &[Module::MmFusion],
        &[Module::MmFusion, Module::DebunkDiffusion],
        &[Module::MmFusion, Module::ChainOfDebunk],
        &Module::ALL,
    ];
    println!("{:<14} {:>7} {:>7} {:>8}", "modules", "train", "test", "time");
    for modules in rows {
        let mut cfg = train_config();
        cfg.modules = modules.to_vec();
        cfg.normalize();
        let t = Instant::now();
        let run = cross_validate(&pipeline.table, &plan, &cfg)?;
        println!(
            "{:<14} {:>7.4} {:>7.4} {:>7.1}s",
            cfg.modules_label(),
            run.mean_train_accuracy(),
            run.pooled.accuracy,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
