//! Scenario configuration, closed-loop runs, metrics and CSV output.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod output;
pub mod scenario;

pub use config::{Config, PlantConfig, ScenarioConfig, SweepConfig};
pub use experiments::{compare_policies, dump_matrices, metrics_row, stable_spread, sweep_no};
pub use metrics::{evaluate, RunMetrics};
pub use output::{write_diagnostics, write_metrics, write_trajectory, MetricsRow};
pub use scenario::{run_scenario, RunResult};
