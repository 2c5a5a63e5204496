//! The module, modality and augmentation ablation tables on a small generated
//! corpus, written to ablation.csv.

use difnd::corpus::chronological_split;
use difnd::harness::{ablate, write_ablation_csv, AblationTable};
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
    let rows = ablate(&pipeline.table, &view, &base, &AblationTable::ALL, threads)?;
    for r in &rows {
        println!(
            "{:<12} {:<14} {:<10} acc {:.3} f1 {:.3}",
            r.table.as_str(),
            r.row,
            r.column,
            r.result.report.accuracy,
            r.result.report.f1
        );
    }
    let path = std::env::temp_dir().join("ablation.csv");
    write_ablation_csv(&rows, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
