//! Routing policies: the learned router and the comparison baselines.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::deferral::DeferralModel;
use crate::error::{Error, Result};
use crate::features::confidence;
use crate::labels::{PredictionRecord, ProbabilityDistribution};
use crate::seed;

/// Confidence thresholds swept by the fixed-threshold baseline.
pub const DEFAULT_THETA_GRID: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Clone)]
pub enum Policy {
    /// Base model only.
    Never,
    /// Expert only.
    Always,
    /// Defer when the base model's top probability is below θ.
    FixedThreshold(f64),
    /// Defer exactly `round(rate·n)` rows chosen by a seeded shuffle.
    Random { rate: f64, seed: u64 },
    /// Defer exactly when the base is wrong and the expert is right.
    Oracle,
    /// Score each record with the model and defer when `d(x) ≥ τ`.
    Learned(Arc<DeferralModel>),
    /// Precomputed deferral scores (e.g. out-of-fold) against a threshold.
    Scored { scores: Vec<f64>, threshold: f64 },
}

impl Policy {
    pub fn tag(&self) -> String {
        match self {
            Policy::Never => "base-only".into(),
            Policy::Always => "expert-only".into(),
            Policy::FixedThreshold(theta) => format!("fixed θ={theta}"),
            Policy::Random { rate, .. } => format!("random ({:.1}%)", rate * 100.0),
            Policy::Oracle => "oracle".into(),
            Policy::Learned(_) | Policy::Scored { .. } => "learned".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Policy::FixedThreshold(t) if !(0.0..=1.0).contains(t) => {
                Err(Error::invalid(format!("θ = {t} outside [0, 1]")))
            }
            Policy::Random { rate, .. } if !(0.0..=1.0).contains(rate) => {
                Err(Error::invalid(format!("random deferral rate {rate} outside [0, 1]")))
            }
            Policy::Scored { threshold, .. } if !(0.0..=1.0).contains(threshold) => {
                Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Which records this policy sends to the expert.
    pub fn defer_mask(&self, records: &[PredictionRecord]) -> Result<Vec<bool>> {
        self.validate()?;
        match self {
            Policy::Never => Ok(vec![false; records.len()]),
            Policy::Always => Ok(vec![true; records.len()]),
            Policy::FixedThreshold(theta) => {
                Ok(records.iter().map(|r| fixed_threshold_defer(&r.base_probs, *theta)).collect())
            }
            Policy::Random { rate, seed } => random_defer_mask(records.len(), *rate, *seed),
            Policy::Oracle => Ok(records
                .iter()
                .map(|r| r.expert_pred.is_some_and(|e| oracle_defer(r.base_pred(), e, r.gold)))
                .collect()),
            Policy::Learned(model) => records.iter().map(|r| Ok(model.defers(model.score_record(r)?))).collect(),
            Policy::Scored { scores, threshold } => {
                if scores.len() != records.len() {
                    return Err(Error::invalid(format!("{} scores for {} records", scores.len(), records.len())));
                }
                Ok(scores.iter().map(|s| s >= threshold).collect())
            }
        }
    }
}

/// True iff the top probability is strictly below θ.
pub fn fixed_threshold_defer(p: &ProbabilityDistribution, theta: f64) -> bool {
    confidence(p) < theta
}

/// Exactly `round(rate·n)` entries set, positions from a seeded shuffle.
pub fn random_defer_mask(n: usize, rate: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("random deferral rate {rate} outside [0, 1]")));
    }
    let count = ((rate * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut mask = vec![false; n];
    for &i in &idx[..count] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Defer only when that turns a wrong answer into a right one. When both models
/// are wrong the base prediction is kept.
pub fn oracle_defer(base_pred: usize, expert_pred: usize, gold: usize) -> bool {
    base_pred != gold && expert_pred == gold
}
