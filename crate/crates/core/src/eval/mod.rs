//! Autoregressive rollouts, relative-error metrics and report files.

pub mod metrics;
pub mod report;
pub mod rollout;

pub use metrics::{mean_rollout_error, relative_error};
pub use rollout::{
    evaluate, Case, ModelSurrogate, Persistence, RolloutResult, SolverOracle, Surrogate,
};
