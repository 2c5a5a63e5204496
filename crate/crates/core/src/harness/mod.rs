//! Training, evaluation, checkpoints, ablation tables and loss-weight sweeps.

pub mod ablate;
pub mod checkpoint;
pub mod crossval;
pub mod fidelity;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use ablate::{
    ablate, plan, run_cell, run_cells, write_ablation_csv, write_report, AblationRow, AblationTable, CellResult,
};
pub use checkpoint::{checkpoint_config, checkpoint_fingerprint, load_checkpoint, save_checkpoint};
pub use crossval::{cross_validate, pooled_fidelity, CrossValRun};
pub use fidelity::{fidelity, FidelityReport};
pub use metrics::{ClassMetrics, Confusion, EvalReport};
pub use sweep::{sweep, write_sweep_csv, SweepGrid, SweepPoint};
pub use train::{evaluate, evaluate_rows, predict_rows, train, EpochLog, Phase, TrainOutcome};
