//! Composite objective, Adam training loop, checkpoints, evaluation and
//! ablation grids.

mod ablation;
mod checkpoint;
mod dataset;
mod evaluate;
mod loss;
mod model;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationCell, AblationGrid, AblationResult};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{prepare_samples, split_indices, Dataset, Sample};
pub use evaluate::{caption_samples, evaluate, evaluate_with, generate_captions, EvalControl};
pub use loss::{composite_loss, sample_loss, LossBreakdown, LossWeights};
pub use model::{Model, ModelConfig};
pub use optim::{Adam, AdamState};
pub use trainer::{EpochLog, StepLog, Trainer};

use crate::decoder::DecodeMode;
use crate::dsp::InputMode;
use crate::encoder::Variant;
use crate::error::{Error, Result};

/// Which reference captions supervise a sample in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CaptionPolicy {
    /// Cross-entropy averaged over every reference.
    All,
    /// One reference per step, cycling with the epoch.
    #[default]
    Rotate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub input_mode: InputMode,
    pub clip_norm: f64,
    pub captions: CaptionPolicy,
    pub decode: DecodeMode,
    /// Category withheld from training and used for evaluation.
    pub exclude_category: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.01,
            lambda3: 0.1,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            seed: 17,
            variant: Variant::Full,
            input_mode: InputMode::Dft321,
            clip_norm: 1.0,
            captions: CaptionPolicy::default(),
            decode: DecodeMode::Greedy,
            exclude_category: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be a non-negative number"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        if let DecodeMode::Beam(0) = self.decode {
            return Err(Error::config("decode", "beam width must be positive"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            periodicity: self.lambda1,
            aperiodicity: self.lambda2,
            orthogonality: self.lambda3,
        }
        .for_variant(self.variant)
    }
}
