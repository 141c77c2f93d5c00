//! Scenarios, batch runs, metrics and experiment configuration.

pub mod batch;
pub mod config;
pub mod metrics;
pub mod suite;

pub use batch::{
    ablation_sweep, run_batch, run_batch_to_dir, BatchOptions, BatchOutput, MethodSpec, OutputDir, SweepAxis,
};
pub use config::ExperimentConfig;
pub use metrics::{compute_metrics, MetricsSummary, RunRecord, TradeoffNormalization};
pub use suite::{benchmark_suite, Scenario, ScenarioClass, Suite};
