//! Classification BCE, explanation NLL and their λ-weighted combination.
//!
//! `l_total = λ·l_cls + (1−λ)·l_gen`, where `l_cls` is the batch mean of the
//! per-example binary cross-entropy and `l_gen` is the mean, over positives
//! that carry a gold explanation, of the length-normalized next-token NLL of
//! that explanation (EOS included). A batch without such examples has
//! `l_gen = 0`.

use thiserror::Error;

use crate::autodiff::numerics::{log_sum_exp, softplus};
use crate::autodiff::{Tape, TensorError, Var};
use crate::corpus::PostRecord;
use crate::model::{explanation_rows, ForwardOutput, GraphOutput};
use crate::tokenizer::{Segment, SegmentedSequence};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("sequence has no EXPLANATION tokens")]
    NoExplanation,
    #[error("token logits have {rows} rows for a sequence of length {len}")]
    LogitRows { rows: usize, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-batch loss components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_gen: f64,
    pub l_total: f64,
    pub lambda: f64,
    pub n_examples: usize,
    /// Examples with label 1.
    pub n_positive: usize,
    /// Positives that contributed to `l_gen`.
    pub n_explained: usize,
}

impl LossBreakdown {
    /// Assembles a breakdown, computing `l_total` with the same arithmetic the
    /// tape uses.
    pub fn combine(lambda: f64, l_cls: f64, l_gen: f64, n_examples: usize, n_positive: usize, n_explained: usize) -> Self {
        LossBreakdown {
            l_cls,
            l_gen,
            l_total: total(lambda, l_cls, l_gen),
            lambda,
            n_examples,
            n_positive,
            n_explained,
        }
    }
}

/// `λ·l_cls + (1−λ)·l_gen`.
pub fn total(lambda: f64, l_cls: f64, l_gen: f64) -> f64 {
    lambda * l_cls + (1.0 - lambda) * l_gen
}

/// `−[y·ln p + (1−y)·ln(1−p)]`.
pub fn bce(prob: f64, y: u8) -> f64 {
    if y == 1 {
        -prob.ln()
    } else {
        -(1.0 - prob).ln()
    }
}

/// BCE of `sigmoid(logit)`, evaluated stably from the logit. Its derivative
/// with respect to the logit is `sigmoid(logit) − y`.
pub fn bce_from_logit(logit: f64, y: u8) -> f64 {
    softplus(logit) - f64::from(y) * logit
}

/// Mean over EXPLANATION positions of `−log softmax(logits[p−1])[id_p]`.
/// `token_logits` must hold one row per sequence position.
pub fn gen_nll(token_logits: &crate::autodiff::Tensor, seq: &SegmentedSequence) -> Result<f64, LossError> {
    let (rows, _) = token_logits.dims2()?;
    if rows != seq.len() {
        return Err(LossError::LogitRows { rows, len: seq.len() });
    }
    let positions: Vec<usize> = seq.positions(Segment::Explanation).filter(|&p| p > 0).collect();
    if positions.is_empty() {
        return Err(LossError::NoExplanation);
    }
    let mut sum = 0.0;
    for &p in &positions {
        let row = token_logits.row(p - 1);
        sum += log_sum_exp(row) - row[seq.ids[p]];
    }
    Ok(sum / positions.len() as f64)
}

fn check_lambda(lambda: f64) -> Result<(), LossError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(LossError::Lambda(lambda))
    }
}

/// Value-only batch loss over full forward outputs.
pub fn batch_loss(
    lambda: f64,
    batch: &[(ForwardOutput, &PostRecord, &SegmentedSequence)],
) -> Result<LossBreakdown, LossError> {
    check_lambda(lambda)?;
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut cls_sum = 0.0;
    let mut gen_sum = 0.0;
    let mut n_pos = 0;
    let mut n_gen = 0;
    for (out, rec, seq) in batch {
        cls_sum += bce_from_logit(out.logit, rec.label);
        n_pos += usize::from(rec.label == 1);
        if rec.has_gold_explanation() && seq.count(Segment::Explanation) > 0 {
            gen_sum += gen_nll(&out.token_logits, seq)?;
            n_gen += 1;
        }
    }
    let l_cls = cls_sum / batch.len() as f64;
    let l_gen = if n_gen == 0 { 0.0 } else { gen_sum / n_gen as f64 };
    Ok(LossBreakdown::combine(lambda, l_cls, l_gen, batch.len(), n_pos, n_gen))
}

/// One example on a tape: its forward graph (with explanation logit rows when
/// it contributes to the generation loss), label and sequence.
pub struct GraphItem<'a> {
    pub output: GraphOutput,
    pub label: u8,
    pub seq: &'a SegmentedSequence,
    pub explained: bool,
}

/// Records the batch loss on the tape. Returns the `l_total` handle and the
/// matching breakdown.
pub fn graph_batch_loss(tape: &mut Tape, lambda: f64, items: &[GraphItem<'_>]) -> Result<(Var, LossBreakdown), LossError> {
    check_lambda(lambda)?;
    if items.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut cls_terms = Vec::with_capacity(items.len());
    let mut gen_terms = Vec::new();
    let mut n_pos = 0;
    for item in items {
        cls_terms.push(tape.bce_with_logits(item.output.logit, f64::from(item.label))?);
        n_pos += usize::from(item.label == 1);
        if item.explained {
            let logits = item.output.token_logits.ok_or(LossError::NoExplanation)?;
            if item.output.logit_rows != explanation_rows(item.seq) {
                return Err(LossError::NoExplanation);
            }
            let targets: Vec<usize> = item
                .seq
                .positions(Segment::Explanation)
                .filter(|&p| p > 0)
                .map(|p| item.seq.ids[p])
                .collect();
            gen_terms.push(tape.cross_entropy_rows(logits, &targets)?);
        }
    }
    let l_cls = tape.mean_scalars(&cls_terms)?;
    let l_gen = if gen_terms.is_empty() {
        tape.constant(crate::autodiff::Tensor::scalar(0.0))
    } else {
        tape.mean_scalars(&gen_terms)?
    };
    let l_total = tape.weighted_sum(&[(l_cls, lambda), (l_gen, 1.0 - lambda)])?;
    let breakdown = LossBreakdown {
        l_cls: tape.value(l_cls).item()?,
        l_gen: tape.value(l_gen).item()?,
        l_total: tape.value(l_total).item()?,
        lambda,
        n_examples: items.len(),
        n_positive: n_pos,
        n_explained: gen_terms.len(),
    };
    Ok((l_total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn bce_at_one_half_is_ln_two() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce(0.5, 1) - ln2).abs() < 1e-12);
        assert!((bce(0.5, 0) - ln2).abs() < 1e-12);
        assert!((bce_from_logit(0.0, 1) - ln2).abs() < 1e-12);
    }

    #[test]
    fn bce_forms_agree_and_stay_nonnegative() {
        for z in [-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 30.0] {
            let p = crate::autodiff::numerics::sigmoid(z);
            for y in [0, 1] {
                let a = bce_from_logit(z, y);
                assert!(a >= 0.0);
                if p > 1e-12 && p < 1.0 - 1e-12 {
                    assert!((a - bce(p, y)).abs() < 1e-9, "z={z} y={y}");
                }
            }
        }
    }

    #[test]
    fn bce_logit_gradient_is_prob_minus_label() {
        let eps = 1e-5;
        for z in [-1.3, 0.0, 0.8] {
            for y in [0u8, 1] {
                let fd = (bce_from_logit(z + eps, y) - bce_from_logit(z - eps, y)) / (2.0 * eps);
                let analytic = crate::autodiff::numerics::sigmoid(z) - f64::from(y);
                assert!((fd - analytic).abs() / analytic.abs() < 1e-6);
            }
        }
    }

    fn seq_with_explanation(m: usize, vocab: usize) -> SegmentedSequence {
        let mut ids = vec![2, 7 % vocab, 4, 8 % vocab, 4];
        let mut segments = vec![Segment::Special, Segment::Post, Segment::Special, Segment::Prompt, Segment::Special];
        for i in 0..m {
            ids.push(5 + i % (vocab - 5));
            segments.push(Segment::Explanation);
        }
        ids.push(3);
        segments.push(Segment::Explanation);
        SegmentedSequence { ids, segments }
    }

    #[test]
    fn uniform_logits_give_ln_vocab() {
        for v in [10usize, 100] {
            for m in [1, 4, 9] {
                let seq = seq_with_explanation(m, v);
                let logits = Tensor::filled(vec![seq.len(), v], 0.37);
                let nll = gen_nll(&logits, &seq).unwrap();
                assert!((nll - (v as f64).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn confident_logits_drive_nll_to_zero() {
        let seq = seq_with_explanation(3, 10);
        let mut logits = Tensor::zeros(vec![seq.len(), 10]);
        for p in 1..seq.len() {
            logits.data_mut()[(p - 1) * 10 + seq.ids[p]] = 60.0;
        }
        assert!(gen_nll(&logits, &seq).unwrap() < 1e-20);
    }

    #[test]
    fn post_position_logits_do_not_matter() {
        let seq = seq_with_explanation(2, 10);
        let a = Tensor::filled(vec![seq.len(), 10], 0.0);
        let mut b = a.clone();
        // rows 0..4 score tokens 1..5, none of which is an explanation token
        for v in &mut b.data_mut()[..40] {
            *v = 123.0;
        }
        assert_eq!(gen_nll(&a, &seq).unwrap(), gen_nll(&b, &seq).unwrap());
    }

    #[test]
    fn missing_explanation_is_a_schema_error() {
        let seq = SegmentedSequence {
            ids: vec![2, 7, 4],
            segments: vec![Segment::Special, Segment::Post, Segment::Special],
        };
        let logits = Tensor::zeros(vec![3, 10]);
        assert!(matches!(gen_nll(&logits, &seq), Err(LossError::NoExplanation)));
    }

    #[test]
    fn combine_is_linear_in_lambda() {
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let b = LossBreakdown::combine(lambda, 0.731, 2.113, 4, 2, 2);
            assert_eq!(b.l_total - (lambda * b.l_cls + (1.0 - lambda) * b.l_gen), 0.0);
        }
        assert_eq!(LossBreakdown::combine(1.0, 0.7, 9.0, 1, 1, 1).l_total, 0.7);
        assert_eq!(LossBreakdown::combine(0.0, 0.7, 9.0, 1, 1, 1).l_total, 9.0);
    }
}
