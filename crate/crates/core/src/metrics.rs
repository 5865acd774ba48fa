//! Accuracy, macro-F1 and false-positive rate from confusion counts.
//!
//! F1 is the unweighted mean of the positive-class and negative-class F1.
//! A class whose F1 denominator is zero scores 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("EmptyCounts: all confusion counts are zero")]
    EmptyCounts,
    #[error("NoNegatives: fp + tn is zero")]
    NoNegatives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    /// Tallies `(predicted, actual)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Percentage of correct predictions.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    Ok(100.0 * (c.tp + c.tn) as f64 / c.total() as f64)
}

fn class_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Macro-averaged F1 as a percentage.
pub fn macro_f1(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let positive = class_f1(c.tp, c.fp, c.fn_);
    let negative = class_f1(c.tn, c.fn_, c.fp);
    Ok(100.0 * (positive + negative) / 2.0)
}

/// Positive-class F1 as a percentage, for comparison.
pub fn positive_f1(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    Ok(100.0 * class_f1(c.tp, c.fp, c.fn_))
}

/// False-positive rate as a percentage of actual negatives.
pub fn fpr(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.fp + c.tn == 0 {
        return Err(MetricsError::NoNegatives);
    }
    Ok(100.0 * c.fp as f64 / (c.fp + c.tn) as f64)
}

/// One row of a tool comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tool: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub acc: f64,
    pub f1: f64,
    pub fpr: f64,
    /// Mean seconds per function.
    pub time: f64,
}

pub fn report(tool: &str, c: &ConfusionCounts, seconds_per_function: f64) -> Result<ReportRow, MetricsError> {
    Ok(ReportRow {
        tool: tool.to_string(),
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        acc: accuracy(c)?,
        f1: macro_f1(c)?,
        fpr: fpr(c)?,
        time: seconds_per_function,
    })
}

fn rounded(row: &ReportRow) -> [String; 9] {
    [
        row.tool.clone(),
        row.tp.to_string(),
        row.fp.to_string(),
        row.tn.to_string(),
        row.fn_.to_string(),
        format!("{:.1}", row.acc),
        format!("{:.1}", row.f1),
        format!("{:.1}", row.fpr),
        format!("{:.2}", row.time),
    ]
}

const HEADER: [&str; 9] = ["Tool", "TP", "FP", "TN", "FN", "ACC", "F1", "FPR", "Time"];

/// CSV with one decimal for percentages.
pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(rounded(row)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Column-aligned text table.
pub fn to_text(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 9]> = rows.iter().map(rounded).collect();
    let mut widths = HEADER.map(str::len);
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |fields: Vec<&str>| {
        let mut s = String::new();
        for (i, (f, w)) in fields.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{f:<w$}");
            } else {
                let _ = write!(s, "  {f:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(HEADER.to_vec());
    for r in &cells {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let all_negative = ConfusionCounts::new(0, 0, 17, 0);
        assert_eq!(accuracy(&all_negative).unwrap(), 100.0);
        assert_eq!(fpr(&ConfusionCounts::new(3, 0, 5, 2)).unwrap(), 0.0);
        assert_eq!(macro_f1(&ConfusionCounts::new(4, 0, 9, 0)).unwrap(), 100.0);
        assert_eq!(accuracy(&ConfusionCounts::default()), Err(MetricsError::EmptyCounts));
        assert_eq!(fpr(&ConfusionCounts::new(1, 0, 0, 1)), Err(MetricsError::NoNegatives));
        // Only negatives present: positive-class F1 has a zero denominator.
        assert_eq!(macro_f1(&all_negative).unwrap(), 50.0);
    }

    #[test]
    fn hand_computed_macro_f1() {
        // Positive F1 = 18/22, negative F1 = 478/482.
        let c = ConfusionCounts::new(9, 2, 239, 2);
        let expected = 100.0 * (18.0 / 22.0 + 478.0 / 482.0) / 2.0;
        assert!((macro_f1(&c).unwrap() - expected).abs() < 1e-12);
        assert!((positive_f1(&c).unwrap() - 100.0 * 18.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn scale_free() {
        let c = ConfusionCounts::new(7, 3, 40, 5);
        let k = ConfusionCounts::new(70, 30, 400, 50);
        assert!((accuracy(&c).unwrap() - accuracy(&k).unwrap()).abs() < 1e-12);
        assert!((macro_f1(&c).unwrap() - macro_f1(&k).unwrap()).abs() < 1e-12);
        assert!((fpr(&c).unwrap() - fpr(&k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn from_pairs_tallies() {
        let c = ConfusionCounts::from_pairs([(true, true), (true, false), (false, false), (false, true), (false, false)]);
        assert_eq!(c, ConfusionCounts::new(1, 1, 2, 1));
    }

    #[test]
    fn report_formats() {
        let row = report("Tool A", &ConfusionCounts::new(9, 2, 239, 2), 0.05).unwrap();
        let csv = to_csv(std::slice::from_ref(&row));
        assert_eq!(csv, "Tool,TP,FP,TN,FN,ACC,F1,FPR,Time\nTool A,9,2,239,2,98.4,90.5,0.8,0.05\n");
        let text = to_text(&[row]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("Tool  "));
        assert!(lines[1].ends_with("0.05"));
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
