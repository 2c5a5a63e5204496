use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use difnd::augment::{augment_corpus, read_sidecar, write_sidecar, AugmentOptions};
use difnd::cod::{read_records, run_cod_corpus, write_records, CapitalizedTagger, CodAgents, CodOptions};
use difnd::config::TrainConfig;
use difnd::corpus::{
    chronological_split, event_disjoint_folds, ingest_debunk_manifest, ingest_manifest, Corpus, ManifestFormat,
    SplitPlan, SplitView, Style,
};
use difnd::encoders::{EncoderSet, FeatureCache};
use difnd::features::{cod_key, extract, ExtractOptions, FeatureTable};
use difnd::harness::{
    ablate, evaluate, load_checkpoint, save_checkpoint, sweep, train, write_ablation_csv, write_report,
    write_sweep_csv, AblationTable, EpochLog, EvalReport, SweepGrid,
};
use difnd::llm::{HttpLlm, LlmClient, TranscriptLog};
use difnd::synth::{self, MockAgents, SynthConfig};

#[derive(Parser)]
#[command(
    name = "difnd",
    version,
    about = "Multimodal fake news detection with diffusion-generated debunk evidence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a JSONL manifest into a binary corpus.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// JSONL debunk pool keyed by event id.
        #[arg(long)]
        debunk_manifest: Option<PathBuf>,
        #[arg(long, default_value = "corpus.bin")]
        out: PathBuf,
    },
    /// Write a chronological or event-disjoint k-fold split plan.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitMode::Chrono)]
        mode: SplitMode,
        #[arg(long, default_value = "0.7,0.15,0.15")]
        ratios: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "split.json")]
        out: PathBuf,
    },
    /// Generate augmented debunk texts in the five styles.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated styles, or `all`.
        #[arg(long, default_value = "all")]
        styles: String,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        backend: Backend,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value = "augmented_debunks.jsonl")]
        out: PathBuf,
    },
    /// Run the chain-of-debunk agents and the verifier.
    Cod {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        backend: Backend,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Captioning agents: T, TV, TA or TVA.
        #[arg(long, default_value = "TVA")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-run verdict accuracy of the mock verifier.
        #[arg(long, default_value_t = 0.8)]
        mock_accuracy: f64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value = "cod_records.jsonl")]
        out: PathBuf,
    },
    /// Encode every item into a feature table, through the feature cache.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        sources: Sources,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "features.bin")]
        out: PathBuf,
    },
    /// Train one model and write report.json and a checkpoint.
    Train(Run),
    /// Evaluate a checkpoint on a split's test ids.
    Evaluate {
        #[command(flatten)]
        run: Run,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Module, modality and augmentation ablations into ablation.csv.
    Ablate {
        #[command(flatten)]
        run: Run,
        /// Comma-separated: modules, modalities, augmentation.
        #[arg(long, default_value = "modules,modalities,augmentation")]
        tables: String,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// One-at-a-time loss-weight sweep into sweep.csv.
    Sweep {
        #[command(flatten)]
        run: Run,
        /// TOML with `alpha`, `beta` and `gamma` value lists.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Write a synthetic corpus with every derived artifact.
    Synth {
        #[arg(long, default_value_t = 600)]
        items: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitMode {
    Chrono,
    Folds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

/// Where features come from when no table is given.
#[derive(Args)]
struct Sources {
    /// Encoder tables; the config's `[encoders]` when unset.
    #[arg(long)]
    encoders: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Augmentation sidecar.
    #[arg(long)]
    augmented: Option<PathBuf>,
    /// Chain-of-debunk records as `KEY=PATH`, e.g. `TVA=cod_records.jsonl`.
    #[arg(long)]
    cod: Vec<String>,
    #[arg(long, default_value_t = 3)]
    cod_runs: usize,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Extracted feature table; encoded from the corpus when unset.
    #[arg(long)]
    features: Option<PathBuf>,
    #[command(flatten)]
    sources: Sources,
    /// View of the split plan; every fold with `--all-views`.
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    all_views: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn ratios(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("expected three ratios, got {s:?}"),
    }
}

fn styles(s: &str) -> anyhow::Result<Vec<Style>> {
    if s == "all" {
        return Ok(Style::AUGMENTATION.to_vec());
    }
    s.split(',')
        .map(|x| {
            Style::parse(x)
                .filter(|st| *st != Style::None)
                .context(format!("unknown style {x:?}"))
        })
        .collect()
}

fn transcript(path: &Option<PathBuf>) -> anyhow::Result<TranscriptLog> {
    Ok(match path {
        Some(p) => TranscriptLog::append_to(p)?,
        None => TranscriptLog::memory(),
    })
}

fn load_features(
    corpus: &Corpus,
    sources: &Sources,
    cfg: Option<&TrainConfig>,
    seed: u64,
) -> anyhow::Result<FeatureTable> {
    let encoders = match (&sources.encoders, cfg.and_then(|c| c.encoders.as_ref())) {
        (Some(p), _) => EncoderSet::load(p)?,
        (None, Some(table)) => EncoderSet::from_config(table)?,
        (None, None) => bail!("no encoders: pass --encoders or add [encoders] to the config"),
    };
    let augmented = sources.augmented.as_deref().map(read_sidecar).transpose()?;
    let mut cod = BTreeMap::new();
    for pair in &sources.cod {
        let (key, path) = pair
            .split_once('=')
            .context(format!("expected KEY=PATH, got {pair:?}"))?;
        cod.insert(key.to_string(), read_records(Path::new(path))?);
    }
    let cache = sources.cache.as_ref().map(FeatureCache::new);
    Ok(extract(
        corpus,
        &encoders,
        &ExtractOptions {
            augmented: augmented.as_ref(),
            cod,
            cod_runs: sources.cod_runs,
            seed,
            cache: cache.as_ref(),
            ..ExtractOptions::default()
        },
    )?)
}

struct Loaded {
    cfg: TrainConfig,
    table: FeatureTable,
    plan: SplitPlan,
}

impl Run {
    fn load(&self) -> anyhow::Result<Loaded> {
        let cfg = TrainConfig::load(&self.config)?;
        let plan = SplitPlan::load(&self.split)?;
        let table = match &self.features {
            Some(p) => FeatureTable::load(p)?,
            None => load_features(&Corpus::load(&self.corpus)?, &self.sources, Some(&cfg), cfg.seed)?,
        };
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(Loaded { cfg, table, plan })
    }

    fn views(&self, plan: &SplitPlan) -> anyhow::Result<Vec<(usize, SplitView)>> {
        let picked: Vec<usize> = if self.all_views {
            (0..plan.num_views()).collect()
        } else {
            vec![self.view]
        };
        picked.into_iter().map(|v| Ok((v, plan.view(v)?))).collect()
    }
}

#[derive(Serialize)]
struct TrainReport {
    view: usize,
    fingerprint: String,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
    history: Vec<EpochLog>,
    train: EvalReport,
    test: EvalReport,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest {
            manifest,
            debunk_manifest,
            out,
        } => {
            let mut corpus = ingest_manifest(&manifest, ManifestFormat::Jsonl)?;
            if let Some(p) = debunk_manifest {
                corpus.attach_debunk_pool(ingest_debunk_manifest(&p)?);
            }
            corpus.save(&out)?;
            log::info!("{} items -> {}", corpus.len(), out.display());
        }
        Command::Split {
            corpus,
            mode,
            ratios: r,
            k,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let plan = match mode {
                SplitMode::Chrono => chronological_split(&corpus, ratios(&r)?)?,
                SplitMode::Folds => event_disjoint_folds(&corpus, k)?,
            };
            plan.save(&out)?;
            log::info!("{} view(s) -> {}", plan.num_views(), out.display());
        }
        Command::Augment {
            corpus,
            styles: s,
            backend,
            seed,
            concurrency,
            transcript: t,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let log = transcript(&t)?;
            let options = AugmentOptions {
                seed,
                ..AugmentOptions::default()
            };
            let client: Box<dyn LlmClient> = match backend {
                Backend::Mock => Box::new(synth::mock_augmenter(&corpus)),
                Backend::Http => Box::new(HttpLlm::from_env()?),
            };
            let records = augment_corpus(&corpus, client.as_ref(), &styles(&s)?, &options, &log, concurrency)?;
            write_sidecar(&out, &records)?;
            log::info!("{} texts -> {}", records.len(), out.display());
        }
        Command::Cod {
            corpus,
            backend,
            runs,
            variant,
            seed,
            mock_accuracy,
            concurrency,
            transcript: t,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let (vision, audio) = (variant.contains('V'), variant.contains('A'));
            if cod_key(vision, audio) != variant {
                bail!("variant must be T, TV, TA or TVA, got {variant:?}");
            }
            let log = transcript(&t)?;
            let options = CodOptions {
                runs,
                seed,
                ..CodOptions::default()
            };
            let records = match backend {
                Backend::Mock => {
                    let agents = MockAgents::new(&corpus, mock_accuracy);
                    run_cod_corpus(
                        &corpus,
                        &CapitalizedTagger,
                        &agents.agents(vision, audio),
                        &options,
                        &log,
                        concurrency,
                    )?
                }
                Backend::Http => {
                    let client = HttpLlm::from_env()?;
                    let agents = CodAgents {
                        text: &client,
                        vision: vision.then_some(&client as _),
                        audio: audio.then_some(&client as _),
                        verifier: &client,
                    };
                    run_cod_corpus(&corpus, &CapitalizedTagger, &agents, &options, &log, concurrency)?
                }
            };
            write_records(&out, &records)?;
            log::info!("{} records -> {}", records.len(), out.display());
        }
        Command::Extract {
            corpus,
            sources,
            seed,
            out,
        } => {
            let table = load_features(&Corpus::load(&corpus)?, &sources, None, seed)?;
            table.save(&out)?;
            log::info!("{} items -> {}", table.len(), out.display());
        }
        Command::Train(run) => {
            let l = run.load()?;
            let mut reports = Vec::new();
            for (v, view) in run.views(&l.plan)? {
                let outcome = train(&l.table, &view, &l.cfg)?;
                let test = evaluate(&outcome.model, &l.table, &view.test)?;
                log::info!("view {v}: test accuracy {:.4} f1 {:.4}", test.accuracy, test.f1);
                let dir = if run.all_views {
                    run.out.join(format!("checkpoint-{v}"))
                } else {
                    run.out.join("checkpoint")
                };
                save_checkpoint(&outcome.model, &dir)?;
                reports.push(TrainReport {
                    view: v,
                    fingerprint: outcome.fingerprint.clone(),
                    best_epoch: outcome.best_epoch,
                    best_val_accuracy: outcome.best_val_accuracy,
                    train: evaluate(&outcome.model, &l.table, &view.train)?,
                    history: outcome.history,
                    test,
                });
            }
            write_report(&reports, &run.out.join("report.json"))?;
        }
        Command::Evaluate { run, checkpoint } => {
            let l = run.load()?;
            let model = load_checkpoint(&checkpoint, &l.cfg)?;
            let view = l.plan.view(run.view)?;
            let report = evaluate(&model, &l.table, &view.test)?;
            log::info!(
                "test accuracy {:.4} f1 {:.4} over {}",
                report.accuracy,
                report.f1,
                report.n
            );
            write_report(&report, &run.out.join("report.json"))?;
        }
        Command::Ablate { run, tables, threads } => {
            let l = run.load()?;
            let tables: Vec<AblationTable> = tables.split(',').map(AblationTable::parse).collect::<Result<_, _>>()?;
            let mut rows = Vec::new();
            for (_, view) in run.views(&l.plan)? {
                rows.extend(ablate(&l.table, &view, &l.cfg, &tables, threads)?);
            }
            write_ablation_csv(&rows, &run.out.join("ablation.csv"))?;
            write_report(&rows, &run.out.join("report.json"))?;
        }
        Command::Sweep { run, grid, threads } => {
            let l = run.load()?;
            let grid: SweepGrid = match grid {
                Some(p) => toml::from_str(&fs::read_to_string(&p)?)?,
                None => SweepGrid::default(),
            };
            let mut points = Vec::new();
            for (_, view) in run.views(&l.plan)? {
                points.extend(sweep(&l.table, &view, &l.cfg, &grid, threads)?);
            }
            write_sweep_csv(&points, &run.out.join("sweep.csv"))?;
            write_report(&points, &run.out.join("report.json"))?;
        }
        Command::Synth {
            items,
            seed,
            threads,
            out,
        } => write_synthetic(items, seed, threads, &out)?,
    }
    Ok(())
}

/// Corpus, sidecars, encoder tables, config, split and features of a
/// generated corpus, ready for `train`, `ablate` and `sweep`.
fn write_synthetic(items: usize, seed: u64, threads: usize, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let generated = synth::generate(&SynthConfig {
        items,
        seed,
        ..SynthConfig::default()
    })?;
    let pipeline = synth::preprocess(&generated, threads)?;
    generated.corpus.save(&out.join("corpus.bin"))?;
    write_sidecar(&out.join("augmented_debunks.jsonl"), &pipeline.augmented)?;
    for (key, records) in &pipeline.cod {
        write_records(&out.join(format!("cod_records_{key}.jsonl")), records)?;
    }
    fs::write(out.join("encoders.toml"), toml::to_string(&synth::encoder_config())?)?;
    fs::write(out.join("config.toml"), synth::train_config().to_toml()?)?;
    event_disjoint_folds(&generated.corpus, 5)?.save(&out.join("folds.json"))?;
    chronological_split(&generated.corpus, (0.7, 0.15, 0.15))?.save(&out.join("split.json"))?;
    pipeline.table.save(&out.join("features.bin"))?;
    log::info!("{} items -> {}", generated.corpus.len(), out.display());
    Ok(())
}
