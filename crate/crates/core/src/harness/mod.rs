//! Experiment configuration, orchestration, metrics and reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod sweep;

pub use config::{ExperimentConfig, Precision, StreamKind, OUTPUT_ROOT_VAR};
pub use metrics::{average_ranking, mean_ci, summarize, MeanCi, MetricsRow};
pub use report::{report_dir, selection_rows, selection_svg, PathwayRow, SelectionRow};
pub use runner::{execute, run_experiment, run_method, write_outputs, ExperimentOutput};
pub use sweep::{efficiency_sweep, samples_to_target, sweep_with, SweepOutput};
