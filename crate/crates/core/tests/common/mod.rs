#![allow(dead_code)]

use dxplain::autodiff::Tape;
use dxplain::corpus::PostRecord;
use dxplain::losses::{graph_batch_loss, GraphItem, LossBreakdown};
use dxplain::model::{forward_graph, register, LogitRows, ModelConfig, ModelParams};
use dxplain::tokenizer::{SegmentedSequence, SequenceBuilder, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const WORDS: &str = "i feel so hopeless and tired today the sun was nice we went out walking";

pub fn vocab() -> Vocabulary {
    Vocabulary::build(&[WORDS, "explain why this post might indicate depression"], 1).unwrap()
}

pub fn builder(v: &Vocabulary, max_len: usize) -> SequenceBuilder<'_> {
    SequenceBuilder::with_prompt(v, "explain why", max_len).unwrap()
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        vocab_size,
        max_len: 24,
        threshold: 0.5,
    }
}

/// Seeded init followed by N(0, std²) noise on every entry, so the check does
/// not sit at the symmetric starting point (unit gains, zero biases).
pub fn perturbed(cfg: ModelConfig, seed: u64, std: f64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let noise = Normal::new(0.0, std).unwrap();
    for t in p.weights.values_mut() {
        for v in t.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    p
}

pub fn record(id: &str, text: &str, label: u8, explanation: Option<&str>) -> PostRecord {
    PostRecord {
        id: id.into(),
        text: text.into(),
        label,
        explanation: explanation.map(Into::into),
    }
}

pub struct Example {
    pub seq: SegmentedSequence,
    pub label: u8,
    pub explained: bool,
}

pub fn mixed_batch(b: &SequenceBuilder<'_>) -> Vec<Example> {
    vec![
        Example {
            seq: b.training("i feel so hopeless and tired", Some("feel hopeless")),
            label: 1,
            explained: true,
        },
        Example {
            seq: b.training("the sun was nice we went out", None),
            label: 0,
            explained: false,
        },
        Example {
            seq: b.training("so tired today", Some("tired and hopeless today")),
            label: 1,
            explained: true,
        },
    ]
}

/// Batch loss and, when `with_grads`, the gradient of every parameter in
/// entry order.
pub fn loss_and_grads(params: &ModelParams, batch: &[Example], lambda: f64, with_grads: bool) -> (LossBreakdown, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let w = register(&mut tape, params, with_grads);
    let mut items = Vec::new();
    for ex in batch {
        let rows = if ex.explained { LogitRows::Explanation } else { LogitRows::None };
        items.push(GraphItem {
            output: forward_graph(&mut tape, &w, &params.config, &ex.seq, rows).unwrap(),
            label: ex.label,
            seq: &ex.seq,
            explained: ex.explained,
        });
    }
    let (loss, breakdown) = graph_batch_loss(&mut tape, lambda, &items).unwrap();
    if !with_grads {
        return (breakdown, Vec::new());
    }
    tape.backward(loss).unwrap();
    let grads = w
        .entries()
        .into_iter()
        .map(|(_, v)| tape.grad(*v).unwrap().to_vec())
        .collect();
    (breakdown, grads)
}

/// Central differences of `l_total` for every entry of every parameter.
pub fn finite_difference(params: &ModelParams, batch: &[Example], lambda: f64, eps: f64) -> Vec<Vec<f64>> {
    let mut p = params.clone();
    let n_tensors = p.weights.values_mut().len();
    let mut out = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let len = p.weights.values_mut()[t].numel();
        let mut g = vec![0.0; len];
        for (j, slot) in g.iter_mut().enumerate() {
            let orig = p.weights.values_mut()[t].data()[j];
            p.weights.values_mut()[t].data_mut()[j] = orig + eps;
            let plus = loss_and_grads(&p, batch, lambda, false).0.l_total;
            p.weights.values_mut()[t].data_mut()[j] = orig - eps;
            let minus = loss_and_grads(&p, batch, lambda, false).0.l_total;
            p.weights.values_mut()[t].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Largest `|a−f| / max(|a|, |f|)` over all entries, with the entry name.
/// Pairs where both values are below 1e-10 are treated as zero gradients
/// (attention key biases, for instance, have an exactly zero gradient that
/// shows up as rounding noise of order 1e-18).
pub fn worst_relative_error(names: &[String], analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ((name, a), f) in names.iter().zip(analytic).zip(numeric) {
        for (j, (x, y)) in a.iter().zip(f).enumerate() {
            let scale = x.abs().max(y.abs());
            if scale < 1e-10 {
                continue;
            }
            let rel = (x - y).abs() / scale;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}] analytic={x} numeric={y}"));
            }
        }
    }
    worst
}
