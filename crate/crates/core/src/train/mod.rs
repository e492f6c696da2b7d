//! Dataset splitting, Adam, the warm-restart cosine schedule, the training
//! loop, evaluation and the paired ablation harness.

mod ablation;
mod data;
mod eval;
mod schedule;
mod trainer;

use crate::io::IoError;
use crate::loss::LossWeights;
use crate::metrics::MetricError;
use crate::model::{ModelConfig, ModelError};

pub use ablation::{
    ablation_data, run_ablation, AblationBudget, AblationKind, AblationReport, VariantReport,
};
pub use data::{repeat_splits, samples_from_pairs, split_dataset, DatasetSplit, Sample};
pub use eval::{baseline_prediction, evaluate, evaluate_baseline, EvalReport, EvalRow};
pub use schedule::{cosine_lr, Adam, Schedule, ADAM_EPS, BETA1, BETA2};
pub use trainer::{epoch_rng, EpochRecord, Trainer, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch} at lr {lr:e}, batch {batch:?}")]
    NonFiniteLoss {
        epoch: usize,
        lr: f64,
        batch: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] crate::autodiff::GraphError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(IoError::from(e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Side of the square training patch; 0 trains on whole images.
    pub patch: usize,
    /// Checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    /// Worker threads per batch. Results do not depend on this.
    pub threads: usize,
}

/// Batch size by model scale: 64 up to the tiny size, 32 up to medium, 8 above.
pub fn preset_batch_size(model: &ModelConfig) -> usize {
    let n = model.param_count();
    if n <= ModelConfig::tiny().param_count() {
        64
    } else if n <= ModelConfig::medium().param_count() {
        32
    } else {
        8
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_model(ModelConfig::tiny())
    }
}

impl TrainConfig {
    /// Defaults with the batch size that goes with `model`.
    pub fn for_model(model: ModelConfig) -> Self {
        Self {
            model,
            loss: LossWeights::default(),
            epochs: 1000,
            batch_size: preset_batch_size(&model),
            schedule: Schedule::default(),
            seed: 0,
            patch: 0,
            checkpoint_every: 100,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.model.validate()?;
        self.loss.validate().map_err(TrainError::Config)?;
        let s = &self.schedule;
        if !(s.lr_min > 0.0 && s.lr_min < s.lr_max && s.lr_max.is_finite()) {
            return bad(format!(
                "need 0 < lr_min < lr_max, got {} and {}",
                s.lr_min, s.lr_max
            ));
        }
        if s.period == 0 || !self.epochs.is_multiple_of(s.period) {
            return bad(format!(
                "restart period {} must divide epochs {}",
                s.period, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let multiple = self.model.size_multiple();
        if !self.patch.is_multiple_of(multiple) {
            return bad(format!(
                "patch must be a multiple of {multiple}, got {}",
                self.patch
            ));
        }
        if self.patch != 0 && self.patch < self.min_patch() {
            return bad(format!(
                "patch {} is smaller than the loss windows need ({})",
                self.patch,
                self.min_patch()
            ));
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        Ok(())
    }
}

impl TrainConfig {
    /// Smallest image side the enabled loss terms accept.
    pub fn min_patch(&self) -> usize {
        let mut m = 2;
        if self.loss.lambda != 0.0 {
            m = m.max(crate::metrics::SSIM_WINDOW);
        }
        if self.loss.gamma != 0.0 {
            m = m.max(crate::loss::COLOR_WINDOW);
        }
        m.next_multiple_of(self.model.size_multiple())
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!(
                    "expected a number or inf, got {t:?}"
                ))),
            },
        }
    }
}
