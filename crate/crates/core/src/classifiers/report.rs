use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Binary classification summary. Rows of `confusion` are true classes and
/// columns predicted classes, both indexed by label code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: [[u64; 2]; 2],
    pub accuracy: f64,
    pub per_class: [ClassMetrics; 2],
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn evaluate(predictions: &[u8], truth: &[u8]) -> Result<EvalReport> {
    if predictions.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::invalid(format!(
                "label codes must be 0 or 1, got {p}/{t}"
            )));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let total = truth.len() as u64;
    let per_class = [0, 1].map(|c| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let support = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support,
        }
    });
    let avg = |w: [f64; 2]| ClassMetrics {
        precision: w[0] * per_class[0].precision + w[1] * per_class[1].precision,
        recall: w[0] * per_class[0].recall + w[1] * per_class[1].recall,
        f1: w[0] * per_class[0].f1 + w[1] * per_class[1].f1,
        support: total,
    };
    let weights = [
        per_class[0].support as f64 / total as f64,
        per_class[1].support as f64 / total as f64,
    ];
    Ok(EvalReport {
        confusion,
        accuracy: ratio(confusion[0][0] + confusion[1][1], total),
        per_class,
        macro_avg: avg([0.5, 0.5]),
        weighted_avg: avg(weights),
        total,
    })
}

impl EvalReport {
    /// Plain-text table in the usual per-class layout.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>12} {:>9} {:>9} {:>9} {:>9}\n",
            "", "precision", "recall", "f1-score", "support"
        );
        let row = |name: &str, m: &ClassMetrics| {
            format!(
                "{name:>12} {:>9.4} {:>9.4} {:>9.4} {:>9}\n",
                m.precision, m.recall, m.f1, m.support
            )
        };
        for (i, label) in Label::ALL.iter().enumerate() {
            s += &row(label.as_str(), &self.per_class[i]);
        }
        s += &format!(
            "{:>12} {:>9} {:>9} {:>9.4} {:>9}\n",
            "accuracy", "", "", self.accuracy, self.total
        );
        s += &row("macro avg", &self.macro_avg);
        s += &row("weighted avg", &self.weighted_avg);
        s
    }
}
