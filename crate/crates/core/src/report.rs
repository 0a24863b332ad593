//! Report tables: the metrics row, the confusion matrix, AUPRC by post length
//! and explanation examples. Every table has a CSV form at full precision and
//! an aligned text form rounded to three decimals.

use serde::{Deserialize, Serialize};

use crate::corpus::LengthBin;
use crate::metrics::EvalReport;

/// Model names used in report rows.
pub const SVM_TFIDF: &str = "SVM+TF-IDF";
pub const BERT_FINETUNE: &str = "BERT-FineTune";
pub const CLASSIFICATION_ONLY: &str = "LLM-Classification-Only";
pub const LLM_MTD: &str = "LLM-MTD";

pub const METRICS_HEADER: [&str; 6] = ["Model", "Accuracy", "Precision", "Recall", "F1-Score", "AUPRC"];
pub const LENGTH_HEADER: [&str; 4] = ["Model", "Short Posts (AUPRC)", "Medium (AUPRC)", "Long (AUPRC)"];
pub const CONFUSION_HEADER: [&str; 3] = ["", "Predicted Positive", "Predicted Negative"];
pub const EXAMPLES_HEADER: [&str; 4] = ["Social Media Post", "Ground Truth", "Prediction", "Generated Explanation"];

/// Placeholder for values that are not available, such as a baseline that
/// was not run or a length bin without positives.
pub const DASH: &str = "-";

/// One table cell: a number, or a missing value.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Count(usize),
    /// A number shown with the given number of decimals in text form.
    Fixed(f64, usize),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => v.to_string(),
            Cell::Count(c) => c.to_string(),
            Cell::Fixed(v, _) => v.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format!("{v:.3}"),
            Cell::Count(c) => c.to_string(),
            Cell::Fixed(v, places) => format!("{v:.places$}"),
            Cell::Missing => DASH.to_string(),
        }
    }
}

/// A header plus rows of cells, renderable as CSV or aligned text.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    /// Columns padded to a common width. Numeric columns are right-aligned,
    /// text columns left-aligned.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(self.header.clone())
            .chain(self.rows.iter().map(|r| r.iter().map(Cell::text).collect()))
            .collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let numeric: Vec<bool> = (0..self.header.len())
            .map(|c| self.rows.iter().all(|r| !matches!(r[c], Cell::Text(_))))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if numeric[c] {
                        format!("{s:>w$}", w = widths[c])
                    } else {
                        format!("{s:<w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

/// Accuracy, precision, recall, F1 and AUPRC per model. `None` leaves the
/// row blank.
pub fn metrics_table(rows: &[(&str, Option<&EvalReport>)]) -> Table {
    let mut t = Table::new(&METRICS_HEADER);
    for (name, report) in rows {
        let mut row = vec![Cell::Text(name.to_string())];
        match report {
            Some(r) => row.extend([
                Cell::Num(r.accuracy),
                Cell::Num(r.precision),
                Cell::Num(r.recall),
                Cell::Num(r.f1),
                r.auprc.map_or(Cell::Missing, Cell::Num),
            ]),
            None => row.extend(std::iter::repeat_n(Cell::Missing, 5)),
        }
        t.push(row);
    }
    t
}

/// AUPRC on short, medium and long posts per model.
pub fn length_table(rows: &[(&str, Option<&EvalReport>)]) -> Table {
    let mut t = Table::new(&LENGTH_HEADER);
    for (name, report) in rows {
        let mut row = vec![Cell::Text(name.to_string())];
        for bin in LengthBin::ALL {
            row.push(
                report
                    .and_then(|r| r.per_bin.get(&bin).copied())
                    .map_or(Cell::Missing, Cell::Num),
            );
        }
        t.push(row);
    }
    t
}

/// Two-by-two counts, actual class by row and predicted class by column.
pub fn confusion_table(report: &EvalReport) -> Table {
    let cm = &report.cm;
    let mut t = Table::new(&CONFUSION_HEADER);
    t.push(vec![
        Cell::Text("Actual Positive".into()),
        Cell::Count(cm.tp),
        Cell::Count(cm.fn_),
    ]);
    t.push(vec![
        Cell::Text("Actual Negative".into()),
        Cell::Count(cm.fp),
        Cell::Count(cm.tn),
    ]);
    t
}

/// One line of an explanation dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub predicted_label: u8,
    pub probability: f64,
    /// Generated text, or [`DASH`] when the prediction is negative.
    pub explanation: String,
}

fn class_name(label: u8) -> &'static str {
    if label == 1 {
        "Positive"
    } else {
        "Negative"
    }
}

/// Post, gold label, prediction and explanation per record.
pub fn examples_table(records: &[ExplanationRecord]) -> Table {
    let mut t = Table::new(&EXAMPLES_HEADER);
    for r in records {
        t.push(vec![
            Cell::Text(r.text.clone()),
            r.label.map_or(Cell::Missing, |l| Cell::Text(class_name(l).into())),
            Cell::Text(class_name(r.predicted_label).into()),
            Cell::Text(r.explanation.clone()),
        ]);
    }
    t
}

/// The plain-text report written next to the CSV tables.
pub fn render_report(title: &str, model: &str, report: &EvalReport) -> String {
    let rows = [(model, Some(report))];
    format!(
        "{title}\n\nMetrics\n{}\nConfusion matrix\n{}\nAUPRC by post length\n{}",
        metrics_table(&rows).to_text(),
        confusion_table(report).to_text(),
        length_table(&rows).to_text(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ConfusionMatrix;
    use std::collections::BTreeMap;

    fn report() -> EvalReport {
        EvalReport {
            cm: ConfusionMatrix {
                tp: 155,
                fp: 35,
                fn_: 45,
                tn: 765,
            },
            accuracy: 0.92,
            precision: 155.0 / 190.0,
            recall: 0.775,
            f1: 0.7949,
            auprc: Some(0.88),
            per_bin: BTreeMap::from([(LengthBin::Short, 0.845), (LengthBin::Long, 0.892)]),
        }
    }

    #[test]
    fn csv_keeps_full_precision_and_text_rounds() {
        let r = report();
        let t = metrics_table(&[(LLM_MTD, Some(&r)), (BERT_FINETUNE, None)]);
        let csv = t.to_csv();
        assert!(csv.starts_with("Model,Accuracy,Precision,Recall,F1-Score,AUPRC\n"));
        assert!(csv.contains(&format!("LLM-MTD,0.92,{},0.775,0.7949,0.88\n", 155.0 / 190.0)));
        assert!(csv.ends_with("BERT-FineTune,,,,,\n"));
        let text = t.to_text();
        assert!(text.contains("0.816"));
        assert!(text.lines().last().unwrap().ends_with('-'));
    }

    #[test]
    fn confusion_layout() {
        let csv = confusion_table(&report()).to_csv();
        assert_eq!(
            csv,
            ",Predicted Positive,Predicted Negative\nActual Positive,155,45\nActual Negative,35,765\n"
        );
    }

    #[test]
    fn missing_bins_render_as_dash() {
        let r = report();
        let t = length_table(&[(LLM_MTD, Some(&r))]);
        assert_eq!(
            t.to_csv(),
            "Model,Short Posts (AUPRC),Medium (AUPRC),Long (AUPRC)\nLLM-MTD,0.845,,0.892\n"
        );
        assert!(t.to_text().lines().nth(2).unwrap().contains("0.845  "));
    }

    #[test]
    fn examples_quote_commas() {
        let rec = ExplanationRecord {
            id: "a".into(),
            text: "Had a great day, really.".into(),
            label: Some(0),
            predicted_label: 0,
            probability: 0.1,
            explanation: DASH.into(),
        };
        let csv = examples_table(&[rec]).to_csv();
        assert!(csv.ends_with("\"Had a great day, really.\",Negative,Negative,-\n"));
    }
}
