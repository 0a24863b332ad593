use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tfidf::SparseVec;
use super::BaselineError;

/// Linear decision function `w·x + b`. The bias is learned as the weight of a
/// constant feature 1, so it is regularized together with `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub reg: f64,
}

impl LinearClassifier {
    pub fn score(&self, x: &SparseVec) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    /// 1 iff the score is nonnegative.
    pub fn predict(&self, x: &SparseVec) -> u8 {
        u8::from(self.score(x) >= 0.0)
    }

    /// `reg/2·(‖w‖² + b²) + mean hinge`.
    pub fn objective(&self, xs: &[SparseVec], ys: &[u8]) -> f64 {
        let norm2: f64 = self.weights.iter().map(|w| w * w).sum::<f64>() + self.bias * self.bias;
        let hinge: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| (1.0 - sign(y) * self.score(x)).max(0.0))
            .sum::<f64>();
        0.5 * self.reg * norm2 + hinge / xs.len() as f64
    }

    /// One `term\tweight` line per feature in vocabulary order, then
    /// `#bias` and `#reg` lines.
    pub fn to_file_string(&self, terms: &[String]) -> String {
        let mut out = String::new();
        for (t, w) in terms.iter().zip(&self.weights) {
            writeln!(out, "{t}\t{w}").expect("string write");
        }
        writeln!(out, "#bias\t{}", self.bias).expect("string write");
        writeln!(out, "#reg\t{}", self.reg).expect("string write");
        out
    }

    pub fn from_file_str(content: &str, terms: &[String]) -> Result<Self, BaselineError> {
        let bad = |line: usize, reason: &str| BaselineError::ModelFile {
            line,
            reason: reason.to_string(),
        };
        let (mut weights, mut bias, mut reg) = (Vec::new(), None, None);
        for (i, line) in content.lines().enumerate() {
            let (key, value) = line.split_once('\t').ok_or_else(|| bad(i + 1, "expected key<TAB>value"))?;
            let value: f64 = value.parse().map_err(|_| bad(i + 1, "bad number"))?;
            match key {
                "#bias" => bias = Some(value),
                "#reg" => reg = Some(value),
                term => {
                    if terms.get(weights.len()).map(String::as_str) != Some(term) {
                        return Err(bad(i + 1, "term does not match the vocabulary order"));
                    }
                    weights.push(value);
                }
            }
        }
        if weights.len() != terms.len() {
            return Err(bad(content.lines().count(), "weight count differs from vocabulary size"));
        }
        Ok(LinearClassifier {
            weights,
            bias: bias.ok_or_else(|| bad(0, "missing #bias"))?,
            reg: reg.ok_or_else(|| bad(0, "missing #reg"))?,
        })
    }
}

fn sign(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Pegasos: stochastic subgradient steps of size `1/(reg·t)` on the primal
/// hinge objective, each followed by projection onto the ball of radius
/// `1/√reg`. The returned classifier is the average of all iterates.
pub fn train_linear_svm(
    xs: &[SparseVec],
    ys: &[u8],
    dim: usize,
    reg: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearClassifier, BaselineError> {
    train_with_checkpoints(xs, ys, dim, reg, epochs, seed, |_| {})
}

/// [`train_linear_svm`], reporting the averaged classifier after each epoch.
pub fn train_with_checkpoints(
    xs: &[SparseVec],
    ys: &[u8],
    dim: usize,
    reg: f64,
    epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&LinearClassifier),
) -> Result<LinearClassifier, BaselineError> {
    if xs.len() != ys.len() {
        return Err(BaselineError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    if !ys.contains(&0) || !ys.contains(&1) {
        return Err(BaselineError::SingleClass);
    }
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(BaselineError::Reg(reg));
    }
    if let Some(bad) = xs.iter().flat_map(|x| &x.indices).find(|&&i| i >= dim) {
        return Err(BaselineError::FeatureIndex { index: *bad, dim });
    }

    let radius2 = 1.0 / reg;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut t = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut current = LinearClassifier {
        weights: avg_w.clone(),
        bias: 0.0,
        reg,
    };
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (reg * t as f64);
            let y = sign(ys[i]);
            let margin = y * (xs[i].dot(&w) + b);
            let shrink = 1.0 - eta * reg;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                for (&j, &x) in xs[i].indices.iter().zip(&xs[i].values) {
                    w[j] += eta * y * x;
                }
                b += eta * y;
            }
            let norm2: f64 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
            if norm2 > radius2 {
                let f = (radius2 / norm2).sqrt();
                w.iter_mut().for_each(|v| *v *= f);
                b *= f;
            }
            let k = 1.0 / t as f64;
            for (a, v) in avg_w.iter_mut().zip(&w) {
                *a += (v - *a) * k;
            }
            avg_b += (b - avg_b) * k;
        }
        current = LinearClassifier {
            weights: avg_w.clone(),
            bias: avg_b,
            reg,
        };
        on_epoch(&current);
    }
    Ok(current)
}
