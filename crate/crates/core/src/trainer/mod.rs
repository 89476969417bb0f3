//! Asynchronous actor-critic training driven by intrinsic rewards.
//!
//! Each worker owns an environment and repeatedly: copies the shared
//! parameters, collects a rollout while scoring every transition with the
//! unsupervised module, and applies one optimizer step that carries both the
//! actor-critic gradient and the unsupervised module's gradient.

mod rollout;
mod run;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::checkpoint::CheckpointError;
use crate::autodiff::{OptimizerConfig, TensorError};
use crate::models::ModelError;
use crate::worlds::WorldError;

pub use rollout::{compute_returns_advantages, mixed_reward, random_policy_rollout, ActorCriticPolicy, Policy, RandomPolicy, Rollout};
pub use run::{read_metrics_csv, run_async_training, write_metrics_csv, EpisodeRecord, RunOutputs, TrainOutcome, METRICS_HEADER};
pub use update::{a3c_update, init_store, intrinsic_reward, ul_update, A3cStats, UlModules, Worker, WorkerRollout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UlMode {
    Autoencoder,
    Prediction,
    None,
}

impl UlMode {
    pub fn name(self) -> &'static str {
        match self {
            UlMode::Autoencoder => "autoencoder",
            UlMode::Prediction => "prediction",
            UlMode::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub workers: usize,
    pub rollout_len: usize,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// η, the factor folded into every intrinsic reward.
    pub intrinsic_scale: f64,
    pub ul_mode: UlMode,
    pub total_steps: u64,
    pub seed: u64,
    /// Write a checkpoint whenever the global step crosses a multiple of this (0: final only).
    pub checkpoint_every: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 16,
            rollout_len: 32,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            intrinsic_scale: 1.0,
            ul_mode: UlMode::Autoencoder,
            total_steps: 100_000,
            seed: 0,
            checkpoint_every: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.rollout_len == 0 {
            return bad("rollout_len must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie strictly between 0 and 1");
        }
        if self.intrinsic_scale.is_nan() || self.intrinsic_scale < 0.0 {
            return bad("intrinsic_scale must be non-negative");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        self.optimizer.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics output: {0}")]
    Metrics(String),
    #[error("worker {worker} panicked after global step {last_step}: {message}")]
    WorkerPanic { worker: usize, last_step: u64, message: String },
    #[error("lost updates: {steps} optimizer steps for {rollouts} completed rollouts")]
    LostUpdates { steps: u64, rollouts: u64 },
}

/// One row of the metrics stream, emitted per completed rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub global_step: u64,
    pub worker_id: usize,
    /// Mean extrinsic return of episodes that ended in this rollout.
    pub ep_return_ext: Option<f64>,
    pub mean_r_int: f64,
    pub ul_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub wall_time_s: f64,
}
