use super::{ModelConfig, ModelError, ModelParams, ParamSet};
use crate::autodiff::{numerics, Tape, Tensor, Var};
use crate::tokenizer::{Segment, SegmentedSequence};

/// Which rows of next-token logits to materialize.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogitRows {
    None,
    All,
    /// Rows `p-1` for every EXPLANATION position `p`: exactly the rows that
    /// score the explanation tokens.
    Explanation,
    Rows(Vec<usize>),
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct GraphOutput {
    /// Final hidden states `[n×d]`.
    pub hidden: Var,
    /// Mean over POST rows `[d]`.
    pub pooled: Var,
    /// Pre-sigmoid classification score (scalar).
    pub logit: Var,
    pub prob: Var,
    /// Next-token logits for `logit_rows`, `[rows×V]`.
    pub token_logits: Option<Var>,
    pub logit_rows: Vec<usize>,
}

/// Value form of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub hidden: Tensor,
    pub pooled: Tensor,
    pub logit: f64,
    /// `p(y=1|x)`, kept strictly inside (0, 1).
    pub prob: f64,
    /// `[n×V]`; row `i` scores token `i+1`.
    pub token_logits: Tensor,
}

/// Registers every weight on the tape, as trainable or constant.
pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> ParamSet<Var> {
    params.weights.map(|_, t| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.constant(t.clone())
        }
    })
}

/// Rows of next-token logits that score the EXPLANATION tokens.
pub fn explanation_rows(seq: &SegmentedSequence) -> Vec<usize> {
    seq.positions(Segment::Explanation).filter(|&p| p > 0).map(|p| p - 1).collect()
}

/// Records the causal transformer, mean pooling over POST positions, the
/// sigmoid head and (optionally) the tied output projection.
pub fn forward_graph(
    tape: &mut Tape,
    w: &ParamSet<Var>,
    cfg: &ModelConfig,
    seq: &SegmentedSequence,
    rows: LogitRows,
) -> Result<GraphOutput, ModelError> {
    let n = seq.len();
    if n > cfg.max_len {
        return Err(ModelError::TooLong {
            len: n,
            max_len: cfg.max_len,
        });
    }
    if n == 0 || seq.count(Segment::Post) == 0 {
        return Err(ModelError::EmptyPool);
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id: bad,
            vocab_size: cfg.vocab_size,
        });
    }

    let tok = tape.gather_rows(w.tok_emb, &seq.ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather_rows(w.pos_emb, &positions)?;
    let mut x = tape.add(tok, pos)?;

    let head_dim = cfg.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();
    for layer in &w.layers {
        let h = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias)?;
        let q = linear(tape, h, layer.attn_q, layer.attn_q_bias)?;
        let k = linear(tape, h, layer.attn_k, layer.attn_k_bias)?;
        let v = linear(tape, h, layer.attn_v, layer.attn_v_bias)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let start = head * head_dim;
            let qh = tape.slice_cols(q, start, head_dim)?;
            let kh = tape.slice_cols(k, start, head_dim)?;
            let vh = tape.slice_cols(v, start, head_dim)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let attn_out = linear(tape, merged, layer.attn_out, layer.attn_out_bias)?;
        x = tape.add(x, attn_out)?;

        let h = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias)?;
        let inner = linear(tape, h, layer.ff_in, layer.ff_in_bias)?;
        let inner = tape.gelu(inner)?;
        let ff = linear(tape, inner, layer.ff_out, layer.ff_out_bias)?;
        x = tape.add(x, ff)?;
    }
    let hidden = tape.layer_norm(x, w.lnf_gain, w.lnf_bias)?;

    let pooled = tape.mean_rows(hidden, &seq.post_mask())?;
    let column = tape.reshape(pooled, vec![cfg.d_model, 1])?;
    let score = tape.matmul(w.cls_weight, column)?;
    let score = tape.reshape(score, vec![1])?;
    let logit = tape.add(score, w.cls_bias)?;
    let prob = tape.sigmoid(logit)?;

    let logit_rows = match rows {
        LogitRows::None => Vec::new(),
        LogitRows::All => (0..n).collect(),
        LogitRows::Explanation => explanation_rows(seq),
        LogitRows::Rows(r) => r,
    };
    let token_logits = if logit_rows.is_empty() {
        None
    } else {
        let selected = if logit_rows.len() == n && logit_rows.iter().enumerate().all(|(i, &r)| i == r) {
            hidden
        } else {
            select_rows(tape, hidden, &logit_rows)?
        };
        Some(tape.matmul_t(selected, w.tok_emb)?)
    };

    Ok(GraphOutput {
        hidden,
        pooled,
        logit,
        prob,
        token_logits,
        logit_rows,
    })
}

fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, weight)?;
    Ok(tape.add_row(y, bias)?)
}

/// Row selection expressed as a product with a constant one-hot matrix, so
/// the gradient flows back to exactly the chosen rows.
fn select_rows(tape: &mut Tape, x: Var, rows: &[usize]) -> Result<Var, ModelError> {
    let n = tape.value(x).dims2()?.0;
    let mut pick = vec![0.0; rows.len() * n];
    for (i, &r) in rows.iter().enumerate() {
        if r >= n {
            return Err(crate::autodiff::TensorError::IndexOutOfRange { index: r, len: n }.into());
        }
        pick[i * n + r] = 1.0;
    }
    let pick = tape.constant(Tensor::new(vec![rows.len(), n], pick)?);
    Ok(tape.matmul(pick, x)?)
}

/// Clamps a sigmoid output into the open unit interval.
pub(crate) fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl ModelParams {
    /// Full forward pass with next-token logits for every position.
    pub fn forward(&self, seq: &SegmentedSequence) -> Result<ForwardOutput, ModelError> {
        self.forward_rows(seq, LogitRows::All)
    }

    /// Forward pass materializing only the requested logit rows.
    pub fn forward_rows(&self, seq: &SegmentedSequence, rows: LogitRows) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let w = register(&mut tape, self, false);
        let out = forward_graph(&mut tape, &w, &self.config, seq, rows)?;
        let token_logits = match out.token_logits {
            Some(v) => tape.value(v).clone(),
            None => Tensor::zeros(vec![0, self.config.vocab_size]),
        };
        Ok(ForwardOutput {
            hidden: tape.value(out.hidden).clone(),
            pooled: tape.value(out.pooled).clone(),
            logit: tape.value(out.logit).data()[0],
            prob: open_unit(tape.value(out.prob).data()[0]),
            token_logits,
        })
    }

    /// Classification probability only.
    pub fn predict_proba(&self, seq: &SegmentedSequence) -> Result<f64, ModelError> {
        Ok(self.forward_rows(seq, LogitRows::None)?.prob)
    }

    /// `Σ log p(e_i | e_<i, x)` over EXPLANATION positions (EOS included).
    pub fn sequence_logprob(&self, seq: &SegmentedSequence) -> Result<f64, ModelError> {
        let rows = explanation_rows(seq);
        if rows.is_empty() {
            return Err(ModelError::MissingExplanation);
        }
        let out = self.forward_rows(seq, LogitRows::Rows(rows.clone()))?;
        let targets: Vec<usize> = seq.positions(Segment::Explanation).filter(|&p| p > 0).map(|p| seq.ids[p]).collect();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total += numerics::log_softmax(out.token_logits.row(i))[t];
        }
        Ok(total)
    }
}
