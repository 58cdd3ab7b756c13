//! Experiment orchestration: configuration, method runs with per-task
//! evaluation, grid search, result persistence, reports and probability
//! grids.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;
pub mod viz;

pub use config::{ExperimentConfig, OUT_DIR_ENV};
pub use metrics::{
    accuracy, accuracy_matrix, faa_from_records, final_average_accuracy, read_index, read_records,
    IndexEntry, MetricsRecord, Split,
};
pub use report::{report, ReportRow};
pub use run::{
    execute, grid_search, grid_search_in, run_experiment, select_best, sequence_nlls, tune,
    RunOutcome, TuneOutcome,
};
pub use viz::{export_prob_grid, padded_bounds, ProbGrid};
