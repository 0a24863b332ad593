use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::LogitRows;
use super::{ModelError, ModelParams};
use crate::autodiff::numerics::log_softmax;
use crate::tokenizer::{Segment, SegmentedSequence, SequenceBuilder, EOS};

/// Next-token selection rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    /// Argmax; ties go to the lowest id.
    Greedy,
    /// Softmax sampling at `temperature` from a seeded stream.
    Sampled { temperature: f64, seed: u64 },
}

/// Decoded explanation plus the ids that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub text: String,
    /// Generated ids, including a trailing EOS when decoding stopped on it.
    pub ids: Vec<usize>,
    /// The full sequence that was fed to the model last (prefix + generated).
    pub sequence: SegmentedSequence,
}

impl ModelParams {
    /// Autoregressive decoding from `BOS post SEP prompt SEP`. Stops on EOS,
    /// after `max_new` tokens, or when the context window is full.
    pub fn generate(
        &self,
        builder: &SequenceBuilder<'_>,
        post: &str,
        max_new: usize,
        mode: DecodeMode,
    ) -> Result<Generation, ModelError> {
        if let DecodeMode::Sampled { temperature, .. } = mode {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(ModelError::Config {
                    field: "temperature",
                    reason: "must be positive and finite".into(),
                });
            }
        }
        let mut seq = builder.generation_prefix(post, max_new.saturating_add(1));
        let mut rng = match mode {
            DecodeMode::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DecodeMode::Greedy => None,
        };
        let mut generated = Vec::new();
        while generated.len() < max_new && seq.len() < self.config.max_len {
            let last = seq.len() - 1;
            let out = self.forward_rows(&seq, LogitRows::Rows(vec![last]))?;
            let row = out.token_logits.row(0);
            let next = match (mode, rng.as_mut()) {
                (DecodeMode::Sampled { temperature, .. }, Some(rng)) => sample(row, temperature, rng),
                _ => argmax(row),
            };
            seq.ids.push(next);
            seq.segments.push(Segment::Explanation);
            generated.push(next);
            if next == EOS {
                break;
            }
        }
        let text = builder.vocab().decode(&generated);
        Ok(Generation {
            text,
            ids: generated,
            sequence: seq,
        })
    }

    /// Greedy explanation text for `post`.
    pub fn generate_explanation(
        &self,
        builder: &SequenceBuilder<'_>,
        post: &str,
        max_new: usize,
        mode: DecodeMode,
    ) -> Result<String, ModelError> {
        Ok(self.generate(builder, post, max_new, mode)?.text)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample(row: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
