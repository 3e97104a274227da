//! Training, evaluation, β tuning and the multi-seed loss comparison.

pub mod adam;
pub mod config;
pub mod evaluate;
pub mod suite;
pub mod train;
pub mod tune;

pub use adam::{Adam, AdamConfig};
pub use config::{SuiteConfig, TrainConfig};
pub use evaluate::{evaluate, evaluate_checkpoint, predict};
pub use suite::{run_suite, SuiteResult};
pub use train::{train, train_dataset, EpochRecord, TrainLog, TrainOutcome, Trainer};
pub use tune::{tune_beta, BetaTuning};
