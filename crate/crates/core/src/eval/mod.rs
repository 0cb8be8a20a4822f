//! Metrics, cross-validation, significance testing, and result tables.

mod experiment;
mod folds;
mod metrics;
mod results;
mod sweep;

pub use experiment::{run_experiment, ExperimentReport, FoldArtifacts, MetricReport};
pub use folds::FoldPlan;
pub use metrics::{accuracy, nmse, t_test, Metric, TTest};
pub use results::{aggregate_rows, write_results_csv, ResultRow, Split};
pub use sweep::{parameter_sweep, write_sweep_csv, SweepCell, SweepResult};
