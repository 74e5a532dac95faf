//! Confusion matrices, classification reports, and feature-subset
//! selection for ablations.
//!
//! The report mirrors the usual two-class layout: per-class precision,
//! recall, F1, and support, plus a support-weighted average row and the
//! overall accuracy. Zero denominators (a class never predicted, or
//! absent from the truth) yield 0.0 with a `zero_division` flag rather
//! than NaN. For single-label binary classification the micro-averaged
//! F1 equals plain accuracy; `f1_micro` relies on that identity.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Prediction counts indexed `[predicted][true]`, classes ordered (H, P).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of true instances of a class.
    pub fn support(&self, class: Label) -> u64 {
        let t = class.index();
        self.counts[0][t] + self.counts[1][t]
    }

    pub fn accuracy(&self) -> f64 {
        let trace = self.counts[0][0] + self.counts[1][1];
        trace as f64 / self.total() as f64
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix> {
    if y_true.is_empty() {
        return Err(Error::Data("empty label vectors".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.counts[p.index()][t.index()] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub zero_division: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Metrics for (H, P) in that order.
    pub per_class: [ClassMetrics; 2],
    /// Support-weighted average row (plain mean when supports are equal).
    pub average: ClassMetrics,
    pub accuracy: f64,
}

fn safe_div(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<Report> {
    if cm.total() == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    let mut per_class = [ClassMetrics::default(); 2];
    for c in 0..2 {
        let tp = cm.counts[c][c] as f64;
        let predicted = (cm.counts[c][0] + cm.counts[c][1]) as f64;
        let support = cm.counts[0][c] + cm.counts[1][c];
        let mut flag = false;
        let precision = safe_div(tp, predicted, &mut flag);
        let recall = safe_div(tp, support as f64, &mut flag);
        let f1 = safe_div(2.0 * precision * recall, precision + recall, &mut flag);
        per_class[c] = ClassMetrics {
            precision,
            recall,
            f1,
            support,
            zero_division: flag,
        };
    }
    let total = cm.total() as f64;
    let weight = |m: &ClassMetrics| m.support as f64 / total;
    let average = ClassMetrics {
        precision: per_class.iter().map(|m| weight(m) * m.precision).sum(),
        recall: per_class.iter().map(|m| weight(m) * m.recall).sum(),
        f1: per_class.iter().map(|m| weight(m) * m.f1).sum(),
        support: cm.total(),
        zero_division: per_class.iter().any(|m| m.zero_division),
    };
    Ok(Report {
        per_class,
        average,
        accuracy: cm.accuracy(),
    })
}

/// Micro-averaged F1 over pooled counts; for single-label binary
/// classification this equals accuracy.
pub fn f1_micro(y_true: &[Label], y_pred: &[Label]) -> Result<f64> {
    Ok(confusion(y_true, y_pred)?.accuracy())
}

// ---------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------

pub fn render_cm(cm: &ConfusionMatrix, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Testing CM for {name}");
    let _ = writeln!(s, "{:>12} {:>8} {:>8}", "", "true H", "true P");
    let _ = writeln!(
        s,
        "{:>12} {:>8} {:>8}",
        "pred H", cm.counts[0][0], cm.counts[0][1]
    );
    let _ = writeln!(
        s,
        "{:>12} {:>8} {:>8}",
        "pred P", cm.counts[1][0], cm.counts[1][1]
    );
    let _ = writeln!(s, "accuracy: {:.3}", cm.accuracy());
    s
}

pub fn render_report(rep: &Report, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Testing CR for {name}");
    let _ = writeln!(
        s,
        "{:>12} {:>10} {:>8} {:>10} {:>9}",
        "", "precision", "recall", "f1-score", "support"
    );
    for (label, m) in [("class H", rep.per_class[0]), ("class P", rep.per_class[1])] {
        let _ = writeln!(
            s,
            "{:>12} {:>10.3} {:>8.3} {:>10.3} {:>9}",
            label, m.precision, m.recall, m.f1, m.support
        );
    }
    let m = rep.average;
    let _ = writeln!(
        s,
        "{:>12} {:>10.3} {:>8.3} {:>10.3} {:>9}",
        "avg / total", m.precision, m.recall, m.f1, m.support
    );
    let _ = writeln!(s, "accuracy: {:.3}", rep.accuracy);
    if rep.average.zero_division {
        let _ = writeln!(s, "warning: zero-division metrics reported as 0");
    }
    s
}

pub fn cm_csv(cm: &ConfusionMatrix) -> String {
    format!(
        ",true_h,true_p\npred_h,{},{}\npred_p,{},{}\n",
        cm.counts[0][0], cm.counts[0][1], cm.counts[1][0], cm.counts[1][1]
    )
}

// ---------------------------------------------------------------------
// feature subsets
// ---------------------------------------------------------------------

/// Named feature-column subsets used by the ablation harness. `AfBase`
/// is the 12 per-contour means; `AfStats` the 84 higher statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    All,
    Af,
    AfBase,
    AfStats,
    Mfcc,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::All,
        Subset::Af,
        Subset::AfStats,
        Subset::AfBase,
        Subset::Mfcc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Af => "af",
            Subset::AfBase => "af-base",
            Subset::AfStats => "af-stats",
            Subset::Mfcc => "mfcc",
        }
    }

    fn keeps(&self, column: &str) -> bool {
        let af = column.starts_with("af_");
        match self {
            Subset::All => true,
            Subset::Af => af,
            Subset::AfBase => af && column.ends_with("_mean"),
            Subset::AfStats => af && !column.ends_with("_mean"),
            Subset::Mfcc => column.starts_with("mfcc_"),
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "af" => Ok(Subset::Af),
            "af-base" => Ok(Subset::AfBase),
            "af-stats" => Ok(Subset::AfStats),
            "mfcc" => Ok(Subset::Mfcc),
            other => Err(Error::InvalidParam(format!("unknown feature subset {other}"))),
        }
    }
}

/// Indices of the columns a subset keeps. Errors when the subset matches
/// nothing (e.g. MFCC requested from an AF-only table).
pub fn subset_columns(names: &[String], subset: Subset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| subset.keeps(n))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidParam(format!(
            "feature table has no {} columns",
            subset.name()
        )));
    }
    Ok(idx)
}
