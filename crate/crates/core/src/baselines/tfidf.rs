use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use super::BaselineError;
use crate::tokenizer::normalize;

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| dense[i] * v).sum()
    }
}

/// Fitted vocabulary with document frequencies and smoothed idf weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TfIdfModel {
    pub terms: Vec<String>,
    pub df: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
    index: HashMap<String, usize>,
}

impl TfIdfModel {
    fn from_parts(terms: Vec<String>, df: Vec<usize>, idf: Vec<f64>, n_docs: usize) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TfIdfModel {
            terms,
            df,
            idf,
            n_docs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Raw term counts times idf, L2-normalized. Out-of-vocabulary tokens are
    /// ignored; a text with none left maps to the zero vector.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in normalize(text) {
            if let Some(i) = self.term_index(&tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&i, &tf)| tf * self.idf[i]).collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// `#n_docs\tN` followed by one `term\tdf\tidf` line per term.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("#n_docs\t{}\n", self.n_docs);
        for i in 0..self.len() {
            writeln!(out, "{}\t{}\t{}", self.terms[i], self.df[i], self.idf[i]).expect("string write");
        }
        out
    }

    pub fn from_file_str(content: &str) -> Result<Self, BaselineError> {
        let bad = |line: usize, reason: &str| BaselineError::ModelFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = content.lines().enumerate();
        let n_docs = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("#n_docs\t")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(1, "expected #n_docs header"))?,
            None => return Err(bad(1, "empty file")),
        };
        let (mut terms, mut df, mut idf) = (Vec::new(), Vec::new(), Vec::new());
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split('\t').collect();
            let [term, d, w] = parts[..] else {
                return Err(bad(i + 1, "expected term<TAB>df<TAB>idf"));
            };
            let d: usize = d.parse().map_err(|_| bad(i + 1, "bad df"))?;
            let w: f64 = w.parse().map_err(|_| bad(i + 1, "bad idf"))?;
            if term.is_empty() || !seen.insert(term.to_string()) {
                return Err(bad(i + 1, "empty or duplicate term"));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad(i + 1, "idf must be finite and nonnegative"));
            }
            terms.push(term.to_string());
            df.push(d);
            idf.push(w);
        }
        Ok(Self::from_parts(terms, df, idf, n_docs))
    }
}

/// `idf(t) = ln((1+N)/(1+df(t))) + 1`; terms with `df < min_df` are dropped.
/// Terms are ordered lexicographically.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], min_df: usize) -> Result<TfIdfModel, BaselineError> {
    if corpus.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: HashSet<String> = normalize(doc.as_ref()).into_iter().collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = corpus.len();
    let kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= min_df.max(1)).collect();
    if kept.is_empty() {
        return Err(BaselineError::EmptyVocabulary);
    }
    let idf = kept.iter().map(|(_, d)| smoothed_idf(n, *d)).collect();
    let (terms, df) = kept.into_iter().unzip();
    Ok(TfIdfModel::from_parts(terms, df, idf, n))
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<&'static str> {
        vec!["the cat sat", "the dog sat", "the bird", "the cat ran"]
    }

    #[test]
    fn idf_examples() {
        let m = fit_tfidf(&docs(), 1).unwrap();
        let idf = |t: &str| m.idf[m.term_index(t).unwrap()];
        assert_eq!(idf("the"), 1.0);
        assert!((idf("dog") - ((5.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert!((idf("dog") - 1.9163).abs() < 1e-4);
        assert_eq!(fit_tfidf(&docs(), 1).unwrap(), m);
    }

    #[test]
    fn min_df_drops_rare_terms() {
        let m = fit_tfidf(&docs(), 2).unwrap();
        assert_eq!(m.terms, ["cat", "sat", "the"]);
        assert!(matches!(fit_tfidf::<&str>(&[], 1), Err(BaselineError::EmptyCorpus)));
    }

    #[test]
    fn transform_normalizes() {
        let m = fit_tfidf(&docs(), 1).unwrap();
        assert!(m.transform("zebra unicorn").is_zero());
        assert!(m.transform("").indices.is_empty());
        let one = m.transform("dog dog");
        assert_eq!(one.values, [1.0]);
        let v = m.transform("The cat sat on the mat, twice: cat!");
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip() {
        let m = fit_tfidf(&docs(), 1).unwrap();
        let back = TfIdfModel::from_file_str(&m.to_file_string()).unwrap();
        assert_eq!(back, m);
        assert!(TfIdfModel::from_file_str("#n_docs\t4\ncat\t1\n").is_err());
        assert!(TfIdfModel::from_file_str("cat\t1\t1.0\n").is_err());
    }
}
