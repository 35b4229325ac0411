//! Confusion matrices, accuracy / macro precision / macro recall, and the
//! fixed-width results table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = labels.len();
        if c == 0 || counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Format {
                what: "confusion matrix",
                msg: format!("expected a {c}x{c} count matrix"),
            });
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], labels: &[String]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::dim("prediction count", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    let c = labels.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= c || p >= c {
            return Err(Error::UnknownLabel(format!("class index {}", t.max(p))));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::new(labels.to_vec(), counts)
}

/// Same as [`confusion`] over label names.
pub fn confusion_by_name(truth: &[String], pred: &[String], labels: &[String]) -> Result<ConfusionMatrix> {
    let index = |name: &String| labels.iter().position(|l| l == name).ok_or_else(|| Error::UnknownLabel(name.clone()));
    let t = truth.iter().map(index).collect::<Result<Vec<_>>>()?;
    let p = pred.iter().map(index).collect::<Result<Vec<_>>>()?;
    confusion(&t, &p, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    /// False when nothing was predicted as this class (precision set to 0).
    pub precision_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let c = cm.labels.len();
    let total = cm.total();
    let accuracy = if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 };
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let diag = cm.counts[k][k] as f64;
            let col = cm.col_sum(k);
            let row = cm.row_sum(k);
            if col == 0 {
                log::warn!("no predictions for class {}; precision taken as 0", cm.labels[k]);
            }
            ClassMetrics {
                precision: if col == 0 { 0.0 } else { diag / col as f64 },
                recall: if row == 0 { 0.0 } else { diag / row as f64 },
                precision_defined: col != 0,
            }
        })
        .collect();
    Metrics {
        accuracy,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / c as f64,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / c as f64,
        per_class,
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub name: String,
    pub dim: usize,
    pub metrics: Metrics,
}

const BEST_MARK: char = '*';

/// Fixed-width table: VSM name, dimensionality, ACC/PRC/RCL at two
/// decimals. The best accuracy carries a trailing `*`.
pub fn report(results: &[SystemResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no systems to report".into()));
    }
    let best = results.iter().map(|r| r.metrics.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let name_w = results.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(3);
    let mut out = String::new();
    writeln!(out, "{:<name_w$}  {:>6}  {:>5}  {:>5}  {:>5}", "VSM", "d", "ACC", "PRC", "RCL").unwrap();
    for r in results {
        let mark = if r.metrics.accuracy == best { BEST_MARK } else { ' ' };
        writeln!(
            out,
            "{:<name_w$}  {:>6}  {:>4.2}{}  {:>5.2}  {:>5.2}",
            r.name, r.dim, r.metrics.accuracy, mark, r.metrics.macro_precision, r.metrics.macro_recall
        )
        .unwrap();
    }
    Ok(out)
}

/// A row read back from [`report`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub dim: usize,
    pub acc: f64,
    pub prc: f64,
    pub rcl: f64,
    pub best: bool,
}

/// Reads the table back; anything after the first blank line that follows
/// a row is ignored.
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |msg: String| Error::Format { what: "report table", msg };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            if rows.is_empty() {
                continue;
            }
            break;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 5 {
            return Err(bad(format!("line {}: too few fields", i + 1)));
        }
        let k = tokens.len();
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
        let acc_tok = tokens[k - 3];
        let best = acc_tok.ends_with(BEST_MARK);
        rows.push(ReportRow {
            name: tokens[..k - 4].join(" "),
            dim: tokens[k - 4].parse().map_err(|e| bad(format!("line {}: {e}", i + 1)))?,
            acc: num(acc_tok.trim_end_matches(BEST_MARK))?,
            prc: num(tokens[k - 2])?,
            rcl: num(tokens[k - 1])?,
            best,
        });
    }
    Ok(rows)
}

/// Text rendering of a confusion matrix with label headers.
pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let w = cm
        .labels
        .iter()
        .map(|l| l.len())
        .chain(cm.counts.iter().flatten().map(|c| c.to_string().len()))
        .max()
        .unwrap_or(1)
        .max(3);
    let mut out = String::new();
    write!(out, "{:<w$}", "").unwrap();
    for l in &cm.labels {
        write!(out, "  {l:>w$}").unwrap();
    }
    out.push('\n');
    for (l, row) in cm.labels.iter().zip(&cm.counts) {
        write!(out, "{l:<w$}").unwrap();
        for c in row {
            write!(out, "  {c:>w$}").unwrap();
        }
        out.push('\n');
    }
    out
}
