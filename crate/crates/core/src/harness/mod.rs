//! Experiment orchestration on phantom cohorts: the prior-combination sweep
//! and the training-size sweep, with table-shaped reports.

mod commands;
mod data;
pub mod fixture;
mod plan;
mod report;
mod sweep;

pub use commands::{disentangle_file, evaluate_dirs, train_run, RunConfig};
pub use data::{nested_subset, pick_donor, subset_size, Dataset};
pub use plan::{
    all_combos, combo_label, default_prior_combo, display_name, ExperimentPlan, Schedule,
    DEFAULT_FRACTIONS,
};
pub use report::{columns, curves_csv, subject_csv, write_outputs, Cell, Row, Table, TableKind};
pub use sweep::{run_combo_sweep, run_fraction_sweep, run_one, RunResult, RunSpec, TrainedRun};
