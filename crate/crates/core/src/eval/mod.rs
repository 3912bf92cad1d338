//! Metrics, interpolation baselines and benchmark drivers.

pub mod bench;
pub mod interp;
pub mod metrics;

pub use bench::{run_ablation, run_arms, run_experiment, write_csv, Arm, BenchConfig, BenchOutput, Method, ResultRow};
pub use interp::{idw_interpolate, ordinary_kriging, KrigingOptions, KrigingOutput, KrigingSystem, Variogram};
pub use metrics::{compute_metrics, compute_metrics_open, mean_std, MetricReport};
