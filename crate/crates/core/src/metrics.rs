//! Confusion counts and the classification metrics used to score routed systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSpace;

/// K×K counts, rows are gold classes and columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    k: usize,
    cells: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_predictions(preds: &[usize], golds: &[usize], k: usize) -> Result<Self> {
        check_aligned(preds, golds)?;
        let mut cells = vec![0u64; k * k];
        for (&p, &g) in preds.iter().zip(golds) {
            if p >= k || g >= k {
                return Err(Error::invalid(format!("class index {} out of range for {k} classes", p.max(g))));
            }
            cells[g * k + p] += 1;
        }
        Ok(ConfusionCounts { k, cells })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [u64] {
        &mut self.cells
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.cells[gold * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    /// Column sum: how often `class` was predicted.
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, class)).sum()
    }

    /// Row sum: how often `class` is the gold label.
    pub fn actual(&self, class: usize) -> u64 {
        (0..self.k).map(|p| self.get(class, p)).sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.true_positives(class), self.predicted(class))
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.true_positives(class), self.actual(class))
    }

    /// Per-class F1, written as 2TP / (2TP + FP + FN). Zero when TP is zero,
    /// which includes classes absent from both predictions and golds.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.true_positives(class);
        if tp == 0 {
            return 0.0;
        }
        let denom = self.predicted(class) + self.actual(class);
        (2 * tp) as f64 / denom as f64
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_aligned(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("metrics need at least one prediction"));
    }
    if preds.len() != golds.len() {
        return Err(Error::invalid(format!("{} predictions but {} gold labels", preds.len(), golds.len())));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_aligned(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 of the class at `positive_index`.
pub fn binary_f1(preds: &[usize], golds: &[usize], positive_index: usize) -> Result<f64> {
    check_aligned(preds, golds)?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == positive_index, g == positive_index) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok((2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
}

/// Unweighted mean of per-class F1 over all `k` classes.
pub fn macro_f1(preds: &[usize], golds: &[usize], k: usize) -> Result<f64> {
    let counts = ConfusionCounts::from_predictions(preds, golds, k)?;
    Ok((0..k).map(|c| counts.f1(c)).sum::<f64>() / k as f64)
}

/// The metric a threshold is tuned for and a system is scored by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    BinaryF1 { positive_index: usize },
    MacroF1 { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    BinaryF1,
    MacroF1,
}

impl Objective {
    /// Resolves an objective kind against a label space. Positive-class F1 on a
    /// multi-class space without a designated positive class is rejected.
    pub fn for_labels(kind: ObjectiveKind, labels: &LabelSpace) -> Result<Self> {
        match kind {
            ObjectiveKind::BinaryF1 => Ok(Objective::BinaryF1 { positive_index: labels.f1_positive()? }),
            ObjectiveKind::MacroF1 => Ok(Objective::MacroF1 { classes: labels.len() }),
        }
    }

    pub fn score(&self, preds: &[usize], golds: &[usize]) -> Result<f64> {
        match *self {
            Objective::BinaryF1 { positive_index } => binary_f1(preds, golds, positive_index),
            Objective::MacroF1 { classes } => macro_f1(preds, golds, classes),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::BinaryF1 { .. } => "binary-f1",
            Objective::MacroF1 { .. } => "macro-f1",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        // matches at positions 0, 1, 3
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_errors() {
        assert!(matches!(accuracy(&[], &[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn binary_f1_examples() {
        assert_eq!(binary_f1(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 1.0);
        // TP=1, FP=1, FN=0: precision 0.5, recall 1.0
        assert!((binary_f1(&[1, 1], &[1, 0], 1).unwrap() - 2.0 / 3.0).abs() < EPS);
        assert_eq!(binary_f1(&[0, 0], &[1, 1], 1).unwrap(), 0.0);
    }

    #[test]
    fn binary_objective_needs_positive_on_multiclass() {
        let ls = LabelSpace::from_names(&["a", "b", "c"], None).unwrap();
        assert!(Objective::for_labels(ObjectiveKind::BinaryF1, &ls).is_err());
        assert!(Objective::for_labels(ObjectiveKind::MacroF1, &ls).is_ok());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        // class 0: TP=1, FP=2, FN=0 -> 0.5; classes 1 and 2 have TP=0
        assert!((macro_f1(&[0, 0, 0], &[0, 1, 2], 3).unwrap() - 1.0 / 6.0).abs() < EPS);
        assert_eq!(macro_f1(&[1, 0], &[0, 1], 2).unwrap(), 0.0);
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn absent_class_counts_as_zero() {
        // class 2 never appears; the two present classes are perfect
        assert!((macro_f1(&[0, 1], &[0, 1], 3).unwrap() - 2.0 / 3.0).abs() < EPS);
    }

    #[test]
    fn confusion_precision_recall() {
        let c = ConfusionCounts::from_predictions(&[1, 1, 0, 0], &[1, 0, 0, 1], 2).unwrap();
        assert_eq!(c.total(), 4);
        assert_eq!(c.get(0, 1), 1);
        assert_eq!(c.precision(1), 0.5);
        assert_eq!(c.recall(1), 0.5);
        assert!(ConfusionCounts::from_predictions(&[2], &[0], 2).is_err());
    }

    fn pairs(k: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0..k, 0..k), 1..60)
    }

    proptest! {
        #[test]
        fn binary_f1_is_macro_component(v in pairs(3), pos in 0usize..3) {
            let (p, g): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let c = ConfusionCounts::from_predictions(&p, &g, 3).unwrap();
            prop_assert!((binary_f1(&p, &g, pos).unwrap() - c.f1(pos)).abs() < EPS);
        }

        #[test]
        fn accuracy_is_trace_over_total(v in pairs(4)) {
            let (p, g): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let c = ConfusionCounts::from_predictions(&p, &g, 4).unwrap();
            prop_assert_eq!(c.total(), p.len() as u64);
            prop_assert_eq!(accuracy(&p, &g).unwrap(), c.trace() as f64 / c.total() as f64);
        }

        #[test]
        fn metrics_are_permutation_invariant(v in pairs(3), rot in 0usize..60) {
            let (p, g): (Vec<_>, Vec<_>) = v.iter().copied().unzip();
            let mut w = v.clone();
            let r = rot % w.len();
            w.rotate_left(r);
            w.reverse();
            let (p2, g2): (Vec<_>, Vec<_>) = w.into_iter().unzip();
            prop_assert!((accuracy(&p, &g).unwrap() - accuracy(&p2, &g2).unwrap()).abs() < EPS);
            prop_assert!((macro_f1(&p, &g, 3).unwrap() - macro_f1(&p2, &g2, 3).unwrap()).abs() < EPS);
            prop_assert!((binary_f1(&p, &g, 1).unwrap() - binary_f1(&p2, &g2, 1).unwrap()).abs() < EPS);
        }
    }
}
