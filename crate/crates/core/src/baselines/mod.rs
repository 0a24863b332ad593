//! TF-IDF features with a linear max-margin classifier, the non-neural
//! comparison system.

mod svm;
mod tfidf;

pub use svm::{train_linear_svm, train_with_checkpoints, LinearClassifier};
pub use tfidf::{fit_tfidf, smoothed_idf, SparseVec, TfIdfModel};

pub use crate::training::classification_only_preset;

use thiserror::Error;

use crate::corpus::PostRecord;

/// Regularization strengths tried by [`SvmBaseline::fit`].
pub const DEFAULT_REG_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no term reaches min_df")]
    EmptyVocabulary,
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("{0} feature vectors but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("regularization must be positive, got {0}")]
    Reg(f64),
    #[error("feature index {index} outside dimension {dim}")]
    FeatureIndex { index: usize, dim: usize },
    #[error("model file line {line}: {reason}")]
    ModelFile { line: usize, reason: String },
    #[error("regularization grid is empty")]
    EmptyGrid,
}

/// Settings of the TF-IDF + SVM pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    pub min_df: usize,
    pub epochs: usize,
    pub reg_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            min_df: 1,
            epochs: 20,
            reg_grid: DEFAULT_REG_GRID.to_vec(),
            seed: 42,
        }
    }
}

/// Fitted featurizer plus classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmBaseline {
    pub tfidf: TfIdfModel,
    pub classifier: LinearClassifier,
    /// Validation accuracy per grid value, in grid order.
    pub reg_scores: Vec<(f64, f64)>,
}

impl SvmBaseline {
    /// Fits TF-IDF on the training posts, trains one SVM per grid value and
    /// keeps the one with the best validation accuracy (first on ties).
    pub fn fit(train: &[PostRecord], val: &[PostRecord], cfg: &SvmConfig) -> Result<Self, BaselineError> {
        if cfg.reg_grid.is_empty() {
            return Err(BaselineError::EmptyGrid);
        }
        let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
        let tfidf = fit_tfidf(&texts, cfg.min_df)?;
        let xs: Vec<SparseVec> = train.iter().map(|r| tfidf.transform(&r.text)).collect();
        let ys: Vec<u8> = train.iter().map(|r| r.label).collect();
        let val_xs: Vec<SparseVec> = val.iter().map(|r| tfidf.transform(&r.text)).collect();

        let mut best: Option<(f64, LinearClassifier)> = None;
        let mut reg_scores = Vec::new();
        for &reg in &cfg.reg_grid {
            let clf = train_linear_svm(&xs, &ys, tfidf.len(), reg, cfg.epochs, cfg.seed)?;
            let correct = val_xs.iter().zip(val).filter(|(x, r)| clf.predict(x) == r.label).count();
            let acc = if val.is_empty() { 0.0 } else { correct as f64 / val.len() as f64 };
            reg_scores.push((reg, acc));
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, clf));
            }
        }
        let (_, classifier) = best.expect("grid is nonempty");
        Ok(SvmBaseline {
            tfidf,
            classifier,
            reg_scores,
        })
    }

    pub fn score(&self, text: &str) -> f64 {
        self.classifier.score(&self.tfidf.transform(text))
    }

    pub fn predict(&self, text: &str) -> u8 {
        self.classifier.predict(&self.tfidf.transform(text))
    }
}
