use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionCounts, Objective};

/// Threshold that defers nothing: scores are always strictly below 1.
pub const NEVER_DEFER: f64 = 1.0;

/// Objective values closer than this are treated as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub objective: f64,
    pub deferral_rate: f64,
    pub deferred: usize,
}

impl Objective {
    pub(crate) fn score_counts(&self, counts: &ConfusionCounts) -> f64 {
        match *self {
            Objective::BinaryF1 { positive_index } => counts.f1(positive_index),
            Objective::MacroF1 { classes } => (0..classes).map(|c| counts.f1(c)).sum::<f64>() / classes as f64,
        }
    }

    fn classes_needed(&self) -> usize {
        match *self {
            Objective::BinaryF1 { positive_index } => positive_index + 1,
            Objective::MacroF1 { classes } => classes,
        }
    }
}

/// Picks the threshold τ maximizing the routed system's objective, where a row is
/// sent to the expert iff its deferral score is ≥ τ.
///
/// Candidates are the distinct observed scores plus [`NEVER_DEFER`]; every other τ
/// produces the same deferral set as one of them. Ties go to the lower deferral
/// rate, then to the larger τ.
pub fn tune_threshold(
    defer_probs: &[f64],
    base_preds: &[usize],
    expert_preds: &[usize],
    golds: &[usize],
    objective: Objective,
) -> Result<ThresholdChoice> {
    let n = defer_probs.len();
    if n == 0 {
        return Err(Error::invalid("threshold tuning needs at least one row"));
    }
    if base_preds.len() != n || expert_preds.len() != n || golds.len() != n {
        return Err(Error::invalid("threshold tuning inputs must be aligned"));
    }
    if let Some(p) = defer_probs.iter().find(|p| !(p.is_finite() && (0.0..1.0).contains(*p))) {
        return Err(Error::invalid(format!("deferral score {p} outside [0, 1)")));
    }
    let k = base_preds
        .iter()
        .chain(expert_preds)
        .chain(golds)
        .copied()
        .max()
        .unwrap_or(0)
        .max(objective.classes_needed().saturating_sub(1))
        + 1;

    let mut counts = ConfusionCounts::from_predictions(base_preds, golds, k)?;
    let mut best = ThresholdChoice {
        threshold: NEVER_DEFER,
        objective: objective.score_counts(&counts),
        deferral_rate: 0.0,
        deferred: 0,
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| defer_probs[b].total_cmp(&defer_probs[a]));

    let mut i = 0;
    while i < n {
        let tau = defer_probs[order[i]];
        while i < n && defer_probs[order[i]] == tau {
            let r = order[i];
            counts.reassign(golds[r], base_preds[r], expert_preds[r]);
            i += 1;
        }
        let score = objective.score_counts(&counts);
        if score > best.objective + TIE_TOLERANCE {
            best =
                ThresholdChoice { threshold: tau, objective: score, deferral_rate: i as f64 / n as f64, deferred: i };
        }
    }
    Ok(best)
}

impl ConfusionCounts {
    /// Moves one row with the given gold label from predicted `from` to predicted `to`.
    pub(crate) fn reassign(&mut self, gold: usize, from: usize, to: usize) {
        let k = self.classes();
        self.cells_mut()[gold * k + from] -= 1;
        self.cells_mut()[gold * k + to] += 1;
    }
}
