//! Records and aggregation for human ratings of generated explanations.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LineDiagnostic;
use crate::report::{Cell, Table};

pub const RUBRIC_HEADER: [&str; 4] = ["Model", "Relevance", "Completeness", "Medical Accuracy"];

#[derive(Debug, Error)]
pub enum HumanEvalError {
    #[error("{field} score {value} outside 1..=5 for post {post_id:?}")]
    OutOfRange { post_id: String, field: &'static str, value: u8 },
    #[error("no scores to aggregate")]
    Empty,
    #[error("invalid score line(s): {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<LineDiagnostic>),
}

/// One annotator's 1–5 ratings of one explanation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricScore {
    pub post_id: String,
    pub annotator_id: String,
    pub system: String,
    pub relevance: u8,
    pub completeness: u8,
    pub medical_accuracy: u8,
}

impl RubricScore {
    pub fn validate(&self) -> Result<(), HumanEvalError> {
        for (field, value) in [
            ("relevance", self.relevance),
            ("completeness", self.completeness),
            ("medical_accuracy", self.medical_accuracy),
        ] {
            if !(1..=5).contains(&value) {
                return Err(HumanEvalError::OutOfRange {
                    post_id: self.post_id.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Per-criterion means over every record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RubricMeans {
    pub relevance: f64,
    pub completeness: f64,
    pub medical_accuracy: f64,
    pub n: usize,
}

/// Means across all annotators and posts. Sums are exact integers, so the
/// result does not depend on record order.
pub fn aggregate_scores(scores: &[RubricScore]) -> Result<RubricMeans, HumanEvalError> {
    if scores.is_empty() {
        return Err(HumanEvalError::Empty);
    }
    let mut sums = [0u64; 3];
    for s in scores {
        s.validate()?;
        sums[0] += u64::from(s.relevance);
        sums[1] += u64::from(s.completeness);
        sums[2] += u64::from(s.medical_accuracy);
    }
    let n = scores.len() as f64;
    Ok(RubricMeans {
        relevance: sums[0] as f64 / n,
        completeness: sums[1] as f64 / n,
        medical_accuracy: sums[2] as f64 / n,
        n: scores.len(),
    })
}

/// [`aggregate_scores`] per system, keyed by system id.
pub fn aggregate_by_system(scores: &[RubricScore]) -> Result<BTreeMap<String, RubricMeans>, HumanEvalError> {
    let mut groups: BTreeMap<String, Vec<RubricScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.system.clone()).or_default().push(s.clone());
    }
    if groups.is_empty() {
        return Err(HumanEvalError::Empty);
    }
    groups
        .into_iter()
        .map(|(k, v)| Ok((k, aggregate_scores(&v)?)))
        .collect()
}

/// Relevance, completeness and medical accuracy per system, one decimal in
/// text form.
pub fn rubric_table(rows: &[(&str, RubricMeans)]) -> Table {
    let mut t = Table::new(&RUBRIC_HEADER);
    for (name, m) in rows {
        t.push(vec![
            Cell::Text(name.to_string()),
            Cell::Fixed(m.relevance, 1),
            Cell::Fixed(m.completeness, 1),
            Cell::Fixed(m.medical_accuracy, 1),
        ]);
    }
    t
}

/// Parses a scores JSON-Lines file; every bad line is reported.
pub fn parse_scores(content: &str) -> Result<Vec<RubricScore>, HumanEvalError> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut keys = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let diag = |message: String| LineDiagnostic { line: i + 1, message };
        match serde_json::from_str::<RubricScore>(line) {
            Ok(s) => {
                if let Err(e) = s.validate() {
                    errors.push(diag(e.to_string()));
                } else if !keys.insert((s.post_id.clone(), s.annotator_id.clone(), s.system.clone())) {
                    errors.push(diag("duplicate (post_id, annotator_id, system)".into()));
                } else {
                    out.push(s);
                }
            }
            Err(e) => errors.push(diag(format!("parse error: {e}"))),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(HumanEvalError::Invalid(errors))
    }
}

pub fn to_jsonl(scores: &[RubricScore]) -> String {
    scores
        .iter()
        .map(|s| serde_json::to_string(s).expect("scores serialize") + "\n")
        .collect()
}
