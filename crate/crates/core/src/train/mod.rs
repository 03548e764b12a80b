//! Optimization: loss, Adam, sampling, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod optim;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use loss::{mse_loss, LossMode};
pub use optim::{lr_at, Adam, OptimState};
pub use run::{train, train_step, EpochLog, TrainOutcome};
