//! Losses and metrics, Adam, early-stopped training and the experiment
//! harness built on it.

pub mod adam;
pub mod experiment;
pub mod fit;
pub mod metrics;
pub mod report;

pub use adam::{Adam, AdamConfig};
pub use experiment::{
    multi_seed_run, prepare, random_search, scaling_experiment, seed_range, Prepared, RunMetrics, SearchResult,
    SearchSpace, SeedFailure, SeedResult, Trial, DEFAULT_FRACTIONS,
};
pub use fit::{evaluate, fit, subsample, EarlyStopping, FitResult, TrainConfig};
pub use metrics::{mae, mean_std, mse, mse_loss, relative_improvement};
pub use report::{
    compare_report, score_external, write_comparison_csv, write_metrics_csv, write_scaling_csv, write_trials_csv, Comparison,
    ComparisonRow, Improvement,
};
