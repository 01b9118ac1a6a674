//! Metrics, paired t-tests and run aggregation.

mod metrics;
mod report;
mod ttest;

pub use metrics::{
    auc, class_metrics, compute_metrics, ClassMetrics, Confusion, MetricSet, FLAG_F1_UNDEFINED, FLAG_PRECISION_UNDEFINED,
    FLAG_RECALL_UNDEFINED,
};
pub use report::{aggregate_runs, Aggregate, AggregateRow, EvalReport, RunRow, SeedError, TTestEntry, TIMESTAMP_FIELD};
pub use ttest::{paired_ttest, student_t_two_sided, TTestResult, ALPHA};
