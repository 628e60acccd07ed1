//! Soft pair loss, a toy trainable embedder, and its SGD training loop.

mod batch;
mod loss;
mod mlp;
mod sgd;

pub use batch::{sample_batch, Batch, TrainVideo};
pub use loss::{cosine_similarity, normalized_cosine, soft_pair_loss, soft_pair_loss_with_grad, PairTargets};
pub use mlp::{MlpGradient, ToyMlp, OUTPUT_BIAS_INIT};
pub use sgd::{train, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Frames per batch (`N`).
    pub batch_size: usize,
    /// Same-video pairs more than this many cardiac cycles apart are dropped
    /// from the loss. `0` disables the constraint.
    pub max_cycles: f64,
    /// Draw each batch from two videos of the same patient.
    pub inter_video_pairs: bool,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Batches per epoch; `None` means one per training video.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
    /// Random horizontal flip and +-5% intensity scaling per window.
    pub data_augmentation: bool,
    pub hidden: usize,
    /// Output feature dimension.
    pub fc: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            max_cycles: 0.0,
            inter_video_pairs: false,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batches_per_epoch: None,
            seed: 1,
            data_augmentation: false,
            hidden: 32,
            fc: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.max_cycles >= 0.0 && self.max_cycles.is_finite()) {
            return bad(format!("max cycles must be >= 0, got {}", self.max_cycles));
        }
        if self.hidden == 0 || self.fc == 0 {
            return bad("hidden and output sizes must be positive".into());
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches per epoch must be positive".into());
        }
        Ok(())
    }
}

/// Loss and parameter gradient of the soft pair loss through `mlp`, without
/// dropout.
pub fn loss_gradient<T: Scalar>(
    mlp: &ToyMlp<T>,
    batch: &[Vec<T>],
    targets: &PairTargets<T>,
) -> Result<(T, MlpGradient<T>)> {
    mlp.loss_gradient(batch, targets, None)
}
