//! Evaluation harness: simulated data, tuning grids, metrics, rank
//! statistics and trace export.

pub mod grid;
pub mod metrics;
pub mod sim;
pub mod stats;
pub mod study;
pub mod traces;

pub use grid::{grid_search, grid_search_configs, GridEvaluation, GridResult, GridSpec};
pub use metrics::{metric, pointwise_mse};
pub use sim::SimFunction;
pub use study::{
    run_benchmark, run_simulation_study, BenchmarkConfig, BenchmarkResult, ComparisonTable, ManifestRow, NamedDataset,
    SimStudyConfig, SimStudyResult,
};
pub use traces::TraceRow;
