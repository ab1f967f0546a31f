//! Discrete optimizers for the network and its linearization.
//!
//! An [`UpdateRule`] pairs a learning rate with a [`Preconditioner`] (the
//! adaptive matrix `D_t`, diagonal for every supported method) and a
//! [`Batching`] policy. [`train`] runs it against any [`Model`] and records
//! what the closed forms in [`crate::solver`] need to be checked against.

mod metrics;
mod rules;
mod schedule;
mod train;

pub use metrics::concentration_metric;
pub use rules::{gd_step, Batching, OptimizerState, Preconditioner, UpdateRule, DEFAULT_EPS_DIV};
pub use schedule::{batch_size_from_ratio, sgd_schedule, BatchStream};
pub use train::{
    adaptive_learning_rate, default_learning_rate, learning_rate_grid, train, train_observed, FullNetwork, Model,
    RecordOptions, StopRule, TrainStatus, TrainTrace, DEFAULT_LOSS_THRESHOLD, FULL_STEP_CAP, LINEARIZED_STEP_CAP,
};
