//! Warm-up plus joint training on the generated corpus, evaluation on the
//! chronological test split, and a checkpoint round trip.

use difnd::corpus::chronological_split;
use difnd::harness::{checkpoint_fingerprint, evaluate, load_checkpoint, save_checkpoint, train};
use difnd::synth::{generate, preprocess, train_config, SynthConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let synth = generate(&SynthConfig {
        items: 300,
        events: 30,
        ..SynthConfig::default()
    })?;
    let pipeline = preprocess(&synth, 4)?;
    let view = chronological_split(&synth.corpus, (0.7, 0.15, 0.15))?.view(0)?;
    let cfg = train_config();
    let out = train(&pipeline.table, &view, &cfg)?;
    println!(
        "{} parameters, best epoch {:?} (val {:?})",
        out.model.num_parameters(),
        out.best_epoch,
        out.best_val_accuracy
    );
    let report = evaluate(&out.model, &pipeline.table, &view.test)?;
    println!("test accuracy {:.3}, f1 {:.3}", report.accuracy, report.f1);

    let dir = tempfile::tempdir()?;
    save_checkpoint(&out.model, dir.path())?;
    println!("checkpoint {}", checkpoint_fingerprint(dir.path())?);
    let loaded = load_checkpoint(dir.path(), &cfg)?;
    assert_eq!(evaluate(&loaded, &pipeline.table, &view.test)?, report);
    println!("reloaded model reproduces the report");
    Ok(())
}
