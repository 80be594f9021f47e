//! Experiment driver: configuration, Adam, the training loop,
//! leave-one-domain-out evaluation, the ablation matrix and sweeps.

pub mod ablation;
pub mod adam;
pub mod config;
pub mod evaluate;
pub mod train;

pub use ablation::{BETA_GRID, MOMENTUM_GRID, run_ablation, run_fold, run_fold_logged, run_sweep, AblationReport, RunResult, SweepParam, SweepReport};
pub use adam::{adam_step, AdamState};
pub use config::{Precision, TrainConfig, Variant};
pub use evaluate::{evaluate, evaluate_dirs, predict, write_predictions, EvalReport, SampleScore};
pub use train::{train, train_logged, train_with, with_threads, Counters, LogRow, TrainOutcome, LOG_HEADER};
