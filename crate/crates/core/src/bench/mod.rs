//! Experiment matrix, runner, statistics, qlog analysis and reports.

pub mod matrix;
pub mod qlog;
pub mod report;
pub mod runner;
pub mod stats;

pub use matrix::{matrix, ExperimentClass, ExperimentSpec, MatrixConfig, Mode};
pub use qlog::{analyze_qlog, CongestionSeries, QlogError, Stall};
pub use report::emit_report;
pub use runner::{Harness, IterationFailure, Metric, MetricSample, RunOptions};
pub use stats::{summarize, StatsError, SummaryStats};
