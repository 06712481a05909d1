//! Accuracy, macro-averaged precision/recall/F1 and the majority baseline.
//!
//! A per-class precision or recall with a zero denominator counts as 0 and
//! stays in the macro average, as does an F1 with `P + R = 0`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::conll::Tag;
use crate::{Error, Result, Role, RoleCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold instances of this class.
    pub support: u64,
}

/// Confusion matrix with derived scores. Rows are gold labels, columns are
/// predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    pub accuracy: f64,
    /// Scores of the classes entering the macro average.
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Builds a report from label indices into `labels`. Only the first
/// `macro_classes` labels are scored and averaged; the rest still count
/// toward accuracy.
pub fn evaluate_indices(
    gold: &[usize],
    pred: &[usize],
    labels: Vec<String>,
    macro_classes: usize,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Invalid(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let k = labels.len();
    assert!(macro_classes >= 1 && macro_classes <= k);
    let mut confusion = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= k || p >= k {
            return Err(Error::Invalid(format!("label index out of range ({g}, {p})")));
        }
        confusion[g][p] += 1;
    }
    let total = gold.len() as u64;
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();

    let per_class: Vec<ClassScores> = (0..macro_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let support: u64 = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassScores {
                label: labels[c].clone(),
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / macro_classes as f64;
    Ok(EvalReport {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: ratio(correct, total),
        labels,
        confusion,
        total,
        per_class,
    })
}

fn role_labels() -> Vec<String> {
    Role::ALL.iter().map(|r| r.to_string()).collect()
}

/// Classification report over the four roles.
pub fn evaluate(gold: &[Role], pred: &[Role]) -> Result<EvalReport> {
    let g: Vec<usize> = gold.iter().map(|r| r.index()).collect();
    let p: Vec<usize> = pred.iter().map(|r| r.index()).collect();
    evaluate_indices(&g, &p, role_labels(), Role::ALL.len())
}

/// Token-level report over BIO sequences. `B-X` and `I-X` both map to role
/// `X`; `O` is a fifth label that counts toward accuracy but is left out of
/// the macro averages.
pub fn sequence_evaluate(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Invalid(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let index = |t: &Tag| t.role().map_or(Role::ALL.len(), Role::index);
    let mut g = Vec::new();
    let mut p = Vec::new();
    for (i, (gs, ps)) in gold.iter().zip(pred).enumerate() {
        if gs.len() != ps.len() {
            return Err(Error::Invalid(format!(
                "sequence {i}: {} gold tags but {} predicted",
                gs.len(),
                ps.len()
            )));
        }
        g.extend(gs.iter().map(index));
        p.extend(ps.iter().map(index));
    }
    let mut labels = role_labels();
    labels.push("O".into());
    evaluate_indices(&g, &p, labels, Role::ALL.len())
}

/// Constant predictor returning the most frequent training role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub role: Role,
}

impl MajorityBaseline {
    pub fn predict(&self) -> Role {
        self.role
    }
}

/// Ties go to the earlier role in hero, villain, victim, other order.
pub fn majority_baseline(train: &RoleCounts) -> Result<MajorityBaseline> {
    if train.total == 0 {
        return Err(Error::Invalid("majority baseline needs a nonempty training set".into()));
    }
    let counts = train.as_array();
    let mut best = 0;
    for i in 1..counts.len() {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    Ok(MajorityBaseline {
        role: Role::from_index(best).expect("four roles"),
    })
}

impl EvalReport {
    /// Aligned text table: summary row (Acc, P, R, F1), per-class rows and
    /// the confusion matrix. Scores are printed with two decimals.
    pub fn to_table(&self, title: &str) -> String {
        let mut s = String::new();
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .chain([title.len(), 5])
            .max()
            .unwrap_or(5);
        let _ = writeln!(s, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>5}", "", "Acc", "P", "R", "F1");
        let _ = writeln!(
            s,
            "{:<width$}  {:>5.2}  {:>5.2}  {:>5.2}  {:>5.2}",
            title, self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        s.push('\n');
        let _ = writeln!(s, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>7}", "", "P", "R", "F1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>5.2}  {:>5.2}  {:>5.2}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        s.push('\n');
        let cell = self
            .confusion
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain(self.labels.iter().map(|l| l.len()))
            .max()
            .unwrap_or(1);
        let _ = write!(s, "{:<width$}", "gold \\ pred");
        for l in &self.labels {
            let _ = write!(s, "  {l:>cell$}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            let _ = write!(s, "{l:<width$}");
            for v in row {
                let _ = write!(s, "  {v:>cell$}");
            }
            s.push('\n');
        }
        s
    }
}
