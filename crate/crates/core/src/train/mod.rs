//! Losses, analytic gradients, optimizers, the epoch loop and the four-stage
//! pipeline.

mod backward;
mod fit;
mod loss;
mod optimizer;
pub mod pipeline;

pub use backward::{backward, batch_loss, prepare_examples, sample_loss, Example};
pub use fit::{fit, EpochLog};
pub use loss::{hierarchical_loss, level_loss, level_targets, semantic_loss, total_loss, LevelTargets, PROB_FLOOR};
pub use optimizer::Optimizer;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutcome, StageError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infer::InferError;
use crate::moe::MoeError;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("target index {index} outside label space of width {width}")]
    TargetRange { index: usize, width: usize },
    #[error("leaf level {level} outside 1..={levels}")]
    LeafLevel { level: usize, levels: usize },
    #[error("record {id}: {reason}")]
    Target { id: String, reason: String },
    #[error("non-finite loss on record {0}")]
    NonFinite(String),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the non-leaf level losses against the leaf-level loss.
    pub omega_c: f64,
    /// Weight of the hierarchical loss against the semantic loss.
    pub omega_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { omega_c: 0.2, omega_s: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, w) in [("omega_c", self.omega_c), ("omega_s", self.omega_s)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(TrainError::Config(format!("{name} = {w} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss_weights: LossWeights,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Leaf threshold used when scoring the validation split.
    pub tau_leaf: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss_weights: LossWeights::default(),
            grad_clip: None,
            seed: 0,
            tau_leaf: crate::infer::DEFAULT_TAU_LEAF,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {}", self.learning_rate));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) || epsilon <= 0.0 {
                return bad(format!("adam betas must lie in (0, 1) and epsilon > 0, got {beta1}, {beta2}, {epsilon}"));
            }
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 {
                return bad(format!("grad_clip = {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_leaf) {
            return bad(format!("tau_leaf = {}", self.tau_leaf));
        }
        self.loss_weights.validate()
    }
}
