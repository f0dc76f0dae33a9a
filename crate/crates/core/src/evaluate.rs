//! Confusion matrices and precision / recall / F1 reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K×K counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("true\\pred");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in class_names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.k {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::Shape(format!(
                "label {} out of range for {k} classes",
                t.max(p)
            )));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any of the three scores hit 0/0 and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassScores>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall and F1 with macro and support-weighted means.
///
/// F1 is `2TP / (2TP + FP + FN)`; any 0/0 is reported as 0 and flagged.
pub fn f1_scores(cm: &ConfusionMatrix, class_names: &[&str]) -> EvalReport {
    let k = cm.num_classes();
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let support: u64 = (0..k).map(|j| cm.get(c, j)).sum();
        let predicted: u64 = (0..k).map(|i| cm.get(i, c)).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let (precision, dp) = ratio(tp, predicted);
        let (recall, dr) = ratio(tp, support);
        let (f1, df) = ratio(2 * tp, 2 * tp + fp + fn_);
        classes.push(ClassScores {
            name: class_names
                .get(c)
                .map(|s| s.to_string())
                .unwrap_or_else(|| c.to_string()),
            precision,
            recall,
            f1,
            support,
            degenerate: dp || dr || df,
        });
    }
    let macro_f1 = if k == 0 {
        0.0
    } else {
        classes.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    let total = cm.total();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        classes.iter().map(|c| c.support as f64 * c.f1).sum::<f64>() / total as f64
    };
    let accuracy = ratio(cm.trace(), total).0;
    EvalReport {
        classes,
        macro_f1,
        weighted_f1,
        accuracy,
        confusion: cm.clone(),
    }
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassScores> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn degenerate_classes(&self) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| c.degenerate)
            .map(|c| c.name.as_str())
            .collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>8}{}",
                c.name,
                c.precision,
                c.recall,
                c.f1,
                c.support,
                if c.degenerate { "  (0/0 -> 0)" } else { "" }
            )?;
        }
        writeln!(f)?;
        writeln!(f, "accuracy     {:.4}", self.accuracy)?;
        writeln!(f, "macro F1     {:.4}", self.macro_f1)?;
        write!(f, "weighted F1  {:.4}", self.weighted_f1)
    }
}

/// Class decision for one row of model outputs: sigmoid at 0.5 for a single
/// logit, otherwise argmax with the lowest index winning ties.
pub fn decide(logits: &[f64]) -> usize {
    if logits.len() == 1 {
        let p = 1.0 / (1.0 + (-logits[0]).exp());
        usize::from(p >= 0.5)
    } else {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }
}
