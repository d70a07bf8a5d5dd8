//! Ranking metrics, the paired t-test and fold-aggregated experiment grids.

mod experiment;
mod metrics;
mod report;
mod ttest;

pub use experiment::{
    evaluate_indices, evaluate_model, run_experiment, CellProgress, CellResult, ExperimentConfig, FractionSummary,
    Method, MethodSummary, MetricPair,
};
pub use metrics::{kendall_tau, pearson, Correlation};
pub use report::{write_report, ExperimentReport, REPORT_FILES};
pub use ttest::{ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_sided_p, TTestResult};
