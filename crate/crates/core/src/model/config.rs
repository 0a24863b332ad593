use super::ModelError;

/// Shape and decision hyperparameters of the transformer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Classification threshold on `p(y=1|x)`.
    pub threshold: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: d=64, two layers, four heads, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size,
            max_len: 128,
            threshold: 0.5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |field: &'static str, reason: &str| {
            Err(ModelError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.d_model == 0 {
            return fail("d_model", "must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("n_heads", "must be positive and divide d_model");
        }
        if self.n_layers == 0 {
            return fail("n_layers", "must be positive");
        }
        if self.vocab_size <= crate::tokenizer::SEP {
            return fail("vocab_size", "must include the reserved tokens");
        }
        if self.max_len < 8 {
            return fail("max_len", "must be at least 8");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold", "must lie strictly between 0 and 1");
        }
        Ok(())
    }
}

/// `1` iff `prob >= threshold`.
pub fn predict_label(prob: f64, threshold: f64) -> u8 {
    u8::from(prob >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule_is_inclusive() {
        assert_eq!(predict_label(0.7, 0.5), 1);
        assert_eq!(predict_label(0.5, 0.5), 1);
        assert_eq!(predict_label(0.49, 0.5), 0);
    }

    #[test]
    fn validation_catches_each_field() {
        let ok = ModelConfig::desk(50);
        assert!(ok.validate().is_ok());
        let bad_heads = ModelConfig { n_heads: 3, ..ok };
        assert!(matches!(bad_heads.validate(), Err(ModelError::Config { field: "n_heads", .. })));
        let bad_len = ModelConfig { max_len: 7, ..ok };
        assert!(matches!(bad_len.validate(), Err(ModelError::Config { field: "max_len", .. })));
        let bad_thr = ModelConfig { threshold: 1.0, ..ok };
        assert!(matches!(bad_thr.validate(), Err(ModelError::Config { field: "threshold", .. })));
    }
}
