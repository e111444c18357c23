//! Metrics, classical baselines and the experiment protocol.

pub mod baselines;
pub mod experiment;
pub mod metrics;

pub use baselines::{baseline_knn, baseline_linear};
pub use experiment::{
    run_experiment, write_results_csv, CellError, DatasetSpec, EvalResult, ExperimentPlan, ExperimentReport,
    Method, Setting, RESULTS_HEADER,
};
pub use metrics::rmse_mae;

#[cfg(test)]
mod tests;
