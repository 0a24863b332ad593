//! Dataset records, JSON-Lines persistence and post-length bins.

mod synthetic;

pub use synthetic::{generate_synthetic, keyword_oracle, SyntheticSpec, NOISY_EXPLANATION, SYMPTOMS};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One labeled post with an optional gold explanation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl PostRecord {
    /// Whitespace-delimited token count of the raw text.
    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }

    pub fn length_bin(&self) -> LengthBin {
        LengthBin::of_words(self.word_count())
    }

    /// True when the record carries a target for the generation loss.
    pub fn has_gold_explanation(&self) -> bool {
        self.label == 1 && self.explanation.as_deref().is_some_and(|e| !e.trim().is_empty())
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Post-length strata: fewer than 50 words, 50 to 150 inclusive, more than 150.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthBin {
    Short,
    Medium,
    Long,
}

impl LengthBin {
    pub const ALL: [LengthBin; 3] = [LengthBin::Short, LengthBin::Medium, LengthBin::Long];

    pub fn of_words(words: usize) -> Self {
        match words {
            0..=49 => LengthBin::Short,
            50..=150 => LengthBin::Medium,
            _ => LengthBin::Long,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthBin::Short => "SHORT",
            LengthBin::Medium => "MEDIUM",
            LengthBin::Long => "LONG",
        }
    }
}

impl fmt::Display for LengthBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn length_bin(record: &PostRecord) -> LengthBin {
    record.length_bin()
}

/// A problem tied to one line of a dataset file (1-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} invalid line(s): {}", .0.len(), join_diagnostics(.0))]
    Invalid(Vec<LineDiagnostic>),
    #[error("invalid synthetic spec: {field} {reason}")]
    Spec { field: &'static str, reason: String },
}

fn join_diagnostics(d: &[LineDiagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    Plain,
    /// Additionally warns about positives without a gold explanation.
    GoldTraining,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loaded {
    pub records: Vec<PostRecord>,
    pub warnings: Vec<LineDiagnostic>,
}

/// Parses JSON-Lines text. Every bad line is reported with its line number;
/// any rejection fails the whole load.
pub fn parse_jsonl(content: &str, mode: LoadMode) -> Result<Loaded, CorpusError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: PostRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineDiagnostic {
                    line: line_no,
                    message: format!("parse error: {e}"),
                });
                continue;
            }
        };
        if record.label > 1 {
            errors.push(LineDiagnostic {
                line: line_no,
                message: format!("label must be 0 or 1, got {}", record.label),
            });
            continue;
        }
        if !ids.insert(record.id.clone()) {
            errors.push(LineDiagnostic {
                line: line_no,
                message: format!("duplicate id {:?}", record.id),
            });
            continue;
        }
        if mode == LoadMode::GoldTraining && record.label == 1 && !record.has_gold_explanation() {
            warnings.push(LineDiagnostic {
                line: line_no,
                message: format!("positive record {:?} has no explanation", record.id),
            });
        }
        records.push(record);
    }
    if errors.is_empty() {
        Ok(Loaded { records, warnings })
    } else {
        Err(CorpusError::Invalid(errors))
    }
}

pub fn load(path: &Path, mode: LoadMode) -> Result<Loaded, CorpusError> {
    parse_jsonl(&fs::read_to_string(path)?, mode)
}

/// One compact JSON object per line, `\n`-terminated.
pub fn to_jsonl(records: &[PostRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save(records: &[PostRecord], path: &Path) -> Result<(), CorpusError> {
    fs::write(path, to_jsonl(records))?;
    Ok(())
}
