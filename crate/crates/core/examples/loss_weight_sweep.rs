//! One-at-a-time sweep of the auxiliary loss weights α, β and γ, written to
//! sweep.csv.

use difnd::corpus::chronological_split;
use difnd::harness::{sweep, write_sweep_csv, SweepGrid};
use difnd::synth::{generate, preprocess, train_config, SynthConfig};

fn main() -> anyhow::Result<()> {
    let synth = generate(&SynthConfig {
        items: 200,
        events: 20,
        ..SynthConfig::default()
    })?;
    let pipeline = preprocess(&synth, 4)?;
    let view = chronological_split(&synth.corpus, (0.7, 0.15, 0.15))?.view(0)?;
    let mut base = train_config();
    base.warmup_epochs = 10;
    base.max_epochs = 30;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let points = sweep(&pipeline.table, &view, &base, &SweepGrid::default(), threads)?;
    for p in &points {
        println!(
            "{} = {:<4} acc {:.3} f1 {:.3}",
            p.weight, p.value, p.result.report.accuracy, p.result.report.f1
        );
    }
    let path = std::env::temp_dir().join("sweep.csv");
    write_sweep_csv(&points, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
