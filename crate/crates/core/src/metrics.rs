//! Confusion counts, threshold metrics, average precision and
//! length-stratified AUPRC.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::LengthBin;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no examples to evaluate")]
    Empty,
    #[error("average precision is undefined without positive labels")]
    NoPositives,
    #[error("label must be 0 or 1, got {0}")]
    Label(u8),
    #[error("score at index {0} is NaN")]
    NanScore(usize),
}

/// Counts with positive = label 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            (0 | 1, bad) | (bad, _) => return Err(MetricsError::Label(bad)),
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators yield 0 rather than NaN.
pub fn scalar_metrics(cm: &ConfusionMatrix) -> ScalarMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ScalarMetrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Indices by descending score; equal scores keep input order.
fn ranking(scores: &[f64]) -> Result<Vec<usize>, MetricsError> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricsError::NanScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    Ok(order)
}

/// `(recall, precision)` after each prefix of the descending-score ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PRCurve, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut hits = 0;
    let points = ranking(scores)?
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            hits += usize::from(labels[i] == 1);
            (hits as f64 / positives as f64, hits as f64 / (k + 1) as f64)
        })
        .collect();
    Ok(PRCurve { points })
}

/// Average precision: the mean, over positive examples, of the precision at
/// each positive's rank.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, i) in ranking(scores)?.into_iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// AUPRC per length bin of `word_counts`; bins without positives are absent.
pub fn stratify_by_length(
    word_counts: &[usize],
    scores: &[f64],
    labels: &[u8],
) -> Result<BTreeMap<LengthBin, f64>, MetricsError> {
    check_lengths(word_counts.len(), scores.len())?;
    check_lengths(scores.len(), labels.len())?;
    let mut out = BTreeMap::new();
    for bin in LengthBin::ALL {
        let (s, l): (Vec<f64>, Vec<u8>) = word_counts
            .iter()
            .zip(scores.iter().zip(labels))
            .filter(|(w, _)| LengthBin::of_words(**w) == bin)
            .map(|(_, (s, l))| (*s, *l))
            .unzip();
        if l.contains(&1) {
            out.insert(bin, auprc(&s, &l)?);
        }
    }
    Ok(out)
}

/// Everything reported for one evaluated split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cm: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the split has no positives.
    pub auprc: Option<f64>,
    pub per_bin: BTreeMap<LengthBin, f64>,
}

impl EvalReport {
    pub fn build(labels: &[u8], scores: &[f64], preds: &[u8], word_counts: &[usize]) -> Result<Self, MetricsError> {
        check_lengths(labels.len(), scores.len())?;
        check_lengths(labels.len(), word_counts.len())?;
        let cm = confusion(preds, labels)?;
        let m = scalar_metrics(&cm);
        let auprc = match auprc(scores, labels) {
            Ok(v) => Some(v),
            Err(MetricsError::NoPositives) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            cm,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            auprc,
            per_bin: stratify_by_length(word_counts, scores, labels)?,
        })
    }

    /// `key=value` lines at full precision.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("tp", self.cm.tp.to_string());
        put("fp", self.cm.fp.to_string());
        put("fn", self.cm.fn_.to_string());
        put("tn", self.cm.tn.to_string());
        put("accuracy", self.accuracy.to_string());
        put("precision", self.precision.to_string());
        put("recall", self.recall.to_string());
        put("f1", self.f1.to_string());
        put("auprc", self.auprc.map_or_else(|| "NA".into(), |v| v.to_string()));
        for bin in LengthBin::ALL {
            let key = format!("auprc_{}", bin.as_str().to_lowercase());
            put(&key, self.per_bin.get(&bin).map_or_else(|| "NA".into(), |v| v.to_string()));
        }
        out
    }
}
