use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InputModality, Module, TrainConfig};
use crate::corpus::SplitView;
use crate::error::{Error, Result};
use crate::features::{DebunkPolicy, FeatureTable};

use super::metrics::EvalReport;
use super::train::{evaluate, train};

/// One trained and evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fingerprint: String,
    pub modules: String,
    pub modalities: String,
    pub debunk_source: DebunkPolicy,
    pub best_epoch: Option<usize>,
    pub report: EvalReport,
}

/// Trains on `view.train`, selects on `view.val` and reports on `view.test`.
pub fn run_cell(table: &FeatureTable, view: &SplitView, cfg: &TrainConfig) -> Result<CellResult> {
    let outcome = train(table, view, cfg)?;
    let report = evaluate(&outcome.model, table, &view.test)?;
    Ok(CellResult {
        fingerprint: cfg.fingerprint(),
        modules: cfg.modules_label(),
        modalities: cfg.modalities_label(),
        debunk_source: cfg.debunk_source,
        best_epoch: outcome.best_epoch,
        report,
    })
}

/// Runs each distinct config once on a pool of `threads` workers (0 picks
/// rayon's default) and returns results in input order. Configs with equal
/// fingerprints share one run.
pub fn run_cells(
    table: &FeatureTable,
    view: &SplitView,
    cfgs: &[TrainConfig],
    threads: usize,
) -> Result<Vec<CellResult>> {
    let mut unique: BTreeMap<String, &TrainConfig> = BTreeMap::new();
    for c in cfgs {
        c.validate()?;
        unique.entry(c.fingerprint()).or_insert(c);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let work: Vec<(&String, &&TrainConfig)> = unique.iter().collect();
    let done: Vec<(String, CellResult)> = pool.install(|| {
        work.par_iter()
            .map(|(fp, cfg)| {
                log::info!(
                    "cell {} [{}] {}",
                    cfg.modules_label(),
                    cfg.modalities_label(),
                    &fp[..12]
                );
                run_cell(table, view, cfg).map(|r| ((*fp).clone(), r))
            })
            .collect::<Result<_>>()
    })?;
    let done: BTreeMap<String, CellResult> = done.into_iter().collect();
    Ok(cfgs.iter().map(|c| done[&c.fingerprint()].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationTable {
    /// Module combinations.
    Modules,
    /// Modality subsets per single module.
    Modalities,
    /// Original vs augmented debunk texts.
    Augmentation,
}

impl AblationTable {
    pub const ALL: [AblationTable; 3] = [
        AblationTable::Modules,
        AblationTable::Modalities,
        AblationTable::Augmentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationTable::Modules => "modules",
            AblationTable::Modalities => "modalities",
            AblationTable::Augmentation => "augmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modules" | "ii" | "2" => Ok(AblationTable::Modules),
            "modalities" | "iii" | "3" => Ok(AblationTable::Modalities),
            "augmentation" | "iv" | "4" => Ok(AblationTable::Augmentation),
            other => Err(Error::Config(format!("unknown ablation table {other:?}"))),
        }
    }
}

/// One planned cell: which table, row and column it fills.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub table: AblationTable,
    pub row: String,
    pub column: String,
    pub config: TrainConfig,
}

pub const MODULE_ROWS: [&[Module]; 6] = [
    &[Module::ChainOfDebunk],
    &[Module::DebunkDiffusion],
    &[Module::MmFusion],
    &[Module::MmFusion, Module::DebunkDiffusion],
    &[Module::MmFusion, Module::ChainOfDebunk],
    &[Module::MmFusion, Module::DebunkDiffusion, Module::ChainOfDebunk],
];

pub const MODALITY_ROWS: [&[InputModality]; 4] = [
    &[InputModality::Text],
    &[InputModality::Text, InputModality::Vision],
    &[InputModality::Text, InputModality::Audio],
    &[InputModality::Text, InputModality::Vision, InputModality::Audio],
];

fn with(base: &TrainConfig, modules: &[Module], modalities: &[InputModality], source: DebunkPolicy) -> TrainConfig {
    let mut c = base.clone();
    c.modules = modules.to_vec();
    c.modalities = modalities.to_vec();
    c.debunk_source = source;
    c.cod_variant = None;
    c.normalize();
    c
}

/// The cells of one table derived from `base`. Module rows keep the base
/// modalities; modality rows skip MM-F on text alone, which has nothing to fuse.
pub fn plan(base: &TrainConfig, table: AblationTable) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    match table {
        AblationTable::Modules => {
            for modules in MODULE_ROWS {
                let config = with(base, modules, &base.modalities, base.debunk_source);
                cells.push(AblationCell {
                    table,
                    row: config.modules_label(),
                    column: "all".into(),
                    config,
                });
            }
        }
        AblationTable::Modalities => {
            for modalities in MODALITY_ROWS {
                for module in Module::ALL {
                    if module == Module::MmFusion && modalities.len() == 1 {
                        continue;
                    }
                    let config = with(base, &[module], modalities, base.debunk_source);
                    cells.push(AblationCell {
                        table,
                        row: config.modalities_label(),
                        column: module.label().into(),
                        config,
                    });
                }
            }
        }
        AblationTable::Augmentation => {
            for source in [DebunkPolicy::Original, DebunkPolicy::Augmented] {
                for (name, modules) in [("DD", &[Module::DebunkDiffusion][..]), ("DIFND", &Module::ALL[..])] {
                    cells.push(AblationCell {
                        table,
                        row: source.as_str().into(),
                        column: name.into(),
                        config: with(base, modules, &base.modalities, source),
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: AblationTable,
    pub row: String,
    pub column: String,
    #[serde(flatten)]
    pub result: CellResult,
}

pub fn ablate(
    table: &FeatureTable,
    view: &SplitView,
    base: &TrainConfig,
    tables: &[AblationTable],
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let cells: Vec<AblationCell> = tables.iter().flat_map(|t| plan(base, *t)).collect();
    let cfgs: Vec<TrainConfig> = cells.iter().map(|c| c.config.clone()).collect();
    let results = run_cells(table, view, &cfgs, threads)?;
    Ok(cells
        .into_iter()
        .zip(results)
        .map(|(c, result)| AblationRow {
            table: c.table,
            row: c.row,
            column: c.column,
            result,
        })
        .collect())
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "table",
        "row",
        "column",
        "modules",
        "modalities",
        "debunk_source",
        "accuracy",
        "f1",
        "recall",
        "precision",
        "n",
        "best_epoch",
        "fingerprint",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let rep = &r.result.report;
        w.write_record([
            r.table.as_str().to_string(),
            r.row.clone(),
            r.column.clone(),
            r.result.modules.clone(),
            r.result.modalities.clone(),
            r.result.debunk_source.as_str().to_string(),
            format!("{:.6}", rep.accuracy),
            format!("{:.6}", rep.f1),
            format!("{:.6}", rep.recall),
            format!("{:.6}", rep.precision),
            rep.n.to_string(),
            r.result.best_epoch.map_or(String::new(), |e| e.to_string()),
            r.result.fingerprint.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// `report.json`: the full result list.
pub fn write_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
