//! Training run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, VpcMode};
use crate::models::Variant;

/// Everything a training run needs. Loaded from JSON; unknown keys are
/// rejected so typos fail loudly, missing keys fall back to the defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub maze_file: PathBuf,
    pub workers: usize,
    pub rollout_length: usize,
    pub total_env_steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub clip_norm: f64,
    pub beta: f64,
    pub lambda_f: f64,
    pub lambda_i: f64,
    pub lambda_vpc: f64,
    pub vpc_mode: VpcMode,
    pub vpc_extrinsic_only: bool,
    /// Workers share one set of Adam moments (the asynchronous default).
    /// Off gives every worker private moments.
    pub shared_adam: bool,
    /// Environment steps between checkpoints; 0 saves only the final one.
    pub checkpoint_interval: u64,
    /// Metrics records between writer flushes.
    pub metrics_flush_interval: u64,
    /// Off zeroes the wall-clock column so runs can be compared bit for bit.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::A3c,
            maze_file: PathBuf::from("mazes/maze_a.txt"),
            workers: 16,
            rollout_length: 20,
            total_env_steps: 1_000_000,
            seed: 1,
            lr: 1e-4,
            gamma: 0.99,
            value_coef: 0.5,
            // On the shipped mazes the advantage signal is on the order of
            // the step penalty; 0.01 anchors the policy at uniform forever.
            entropy_coef: 0.001,
            clip_norm: 40.0,
            beta: 5e-4,
            lambda_f: 0.2,
            lambda_i: 0.8,
            lambda_vpc: 0.1,
            vpc_mode: VpcMode::Squared,
            vpc_extrinsic_only: false,
            shared_adam: true,
            checkpoint_interval: 0,
            metrics_flush_interval: 1,
            record_wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(reason: String) -> Error {
            Error::InvalidConfig { reason }
        }
        if self.workers == 0 {
            return Err(bad("workers must be >= 1".into()));
        }
        if self.rollout_length == 0 {
            return Err(bad("rollout_length must be >= 1".into()));
        }
        if self.total_env_steps == 0 {
            return Err(bad("total_env_steps must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(bad(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("beta", self.beta),
            ("lambda_f", self.lambda_f),
            ("lambda_i", self.lambda_i),
            ("lambda_vpc", self.lambda_vpc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            lambda_f: self.lambda_f,
            lambda_i: self.lambda_i,
            lambda_vpc: self.lambda_vpc,
            vpc_mode: self.vpc_mode,
            vpc_extrinsic_only: self.vpc_extrinsic_only,
            beta: self.beta,
        }
    }
}
