//! Evaluation, sweeps and tables.

mod metrics;
mod sweep;
mod table;

use serde::{Deserialize, Serialize};

use crate::trainer::OptimizerKind;

pub use metrics::{evaluate, evaluate_predictions, fingerprint, Evaluation};
pub use sweep::{
    multitask_weight_grid, run_sweep, widths, Setting, SweepPoint, SweepRow, SweepSpec, BASE_WIDTH, DEFAULT_MAX_POINTS,
};
pub use table::{emit_plot_data, emit_table, percent, render_report, ComparisonTable, TableFormat, PER_CLASS_LIMIT};

/// Test-split metrics of a training run plus what is needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluation: Evaluation,
    /// SHA-256 of the network and training configuration, seed included.
    pub fingerprint: String,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub epochs_run: usize,
    /// Epoch whose weights were evaluated.
    pub selected_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub plateau_epoch: Option<usize>,
    pub final_train_accuracy: f64,
    /// Wall-clock time; not serialized so that reports compare byte for byte.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize to JSON");
        s.push('\n');
        s
    }
}
