//! Adam optimization of the joint objective, dataset splitting, early
//! stopping on validation AUPRC and λ selection.

mod adam;
mod data;
mod fit;
mod split;

pub use adam::{adam_step, adam_step_tensors, clip_grad_norm, OptimizerState};
pub use data::{classification_prefix, EncodedExample, EncodedSet};
pub use fit::{evaluate_set, fit, fit_with, score_set, select_lambda, set_loss, EpochRecord, LambdaRun, LambdaSelection, TrainHistory, Trainer};
pub use split::{split_dataset, Split};

use thiserror::Error;

use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

/// Candidate λ values tried when none are given.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 10 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("invalid training config: {field} {reason}")]
    Config { field: &'static str, reason: String },
    #[error("optimizer state: {0}")]
    OptimizerState(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set has no positive examples, so AUPRC is undefined")]
    NoValidationPositives,
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the classification loss.
    pub lambda: f64,
    pub seed: u64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            batch_size: 8,
            lambda: 0.5,
            seed: 42,
            patience: 3,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |field: &'static str, reason: &str| {
            Err(TrainError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return fail("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return fail("beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("eps", "must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda", "must lie in [0, 1]");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail("clip_norm", "must be positive");
            }
        }
        Ok(())
    }
}

/// The classification-only configuration: λ = 1, everything else unchanged.
pub fn classification_only_preset(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        lambda: 1.0,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { beta2: -0.1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lambda: 1.5, ..Default::default() },
        ];
        let fields: Vec<&str> = cases
            .iter()
            .map(|c| match c.validate() {
                Err(TrainError::Config { field, .. }) => field,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(fields, ["lr", "beta1", "beta2", "batch_size", "lambda"]);
    }

    #[test]
    fn preset_only_changes_lambda() {
        let base = TrainConfig { lambda: 0.25, seed: 9, ..Default::default() };
        let p = classification_only_preset(&base);
        assert_eq!(p.lambda, 1.0);
        assert_eq!(TrainConfig { lambda: 0.25, ..p }, base);
    }
}
