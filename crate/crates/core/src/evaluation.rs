//! Running a policy over a dataset and pricing the result.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::Policy;
use crate::error::{Error, Result};
use crate::labels::PredictionRecord;
use crate::metrics::{accuracy, Objective};

/// Per-call cost and latency of the two models. Costs are relative to `base_cost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub base_cost: f64,
    pub expert_cost: f64,
    pub base_latency_ms: f64,
    pub expert_latency_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { base_cost: 1.0, expert_cost: 50.0, base_latency_ms: 12.0, expert_latency_ms: 850.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_cost", self.base_cost),
            ("expert_cost", self.expert_cost),
            ("base_latency_ms", self.base_latency_ms),
            ("expert_latency_ms", self.expert_latency_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Cost per instance in units of `base_cost`. The base model runs on every row
/// (its probabilities feed the router) and the expert on the deferred fraction.
pub fn cascade_cost(deferral_rate: f64, cm: &CostModel) -> f64 {
    (cm.base_cost + deferral_rate * cm.expert_cost) / cm.base_cost
}

/// Average latency per instance in milliseconds.
pub fn cascade_latency(deferral_rate: f64, cm: &CostModel) -> f64 {
    cm.base_latency_ms + deferral_rate * cm.expert_latency_ms
}

/// The final prediction: the expert's when deferring, the base model's otherwise.
pub fn route(defer: bool, base_pred: usize, expert_pred: Option<usize>) -> Result<usize> {
    if defer {
        expert_pred.ok_or_else(|| Error::MissingExpert { id: String::new() })
    } else {
        Ok(base_pred)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub policy: String,
    pub objective: String,
    pub f1: f64,
    pub accuracy: f64,
    pub deferral_rate: f64,
    pub deferred: usize,
    pub n: usize,
    pub relative_cost: f64,
    pub avg_latency_ms: f64,
}

/// Routes every record per `mask` and scores the combined predictions.
pub fn evaluate_mask(
    records: &[PredictionRecord],
    mask: &[bool],
    objective: Objective,
    cost_model: &CostModel,
    tag: impl Into<String>,
) -> Result<SystemReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    if mask.len() != records.len() {
        return Err(Error::invalid(format!("{} mask entries for {} records", mask.len(), records.len())));
    }
    cost_model.validate()?;
    let preds = records
        .iter()
        .zip(mask)
        .map(|(r, &d)| route(d, r.base_pred(), r.expert_pred).map_err(|_| Error::MissingExpert { id: r.id.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<usize> = records.iter().map(|r| r.gold).collect();
    let deferred = mask.iter().filter(|&&d| d).count();
    let deferral_rate = deferred as f64 / records.len() as f64;
    Ok(SystemReport {
        policy: tag.into(),
        objective: objective.name().to_string(),
        f1: objective.score(&preds, &golds)?,
        accuracy: accuracy(&preds, &golds)?,
        deferral_rate,
        deferred,
        n: records.len(),
        relative_cost: cascade_cost(deferral_rate, cost_model),
        avg_latency_ms: cascade_latency(deferral_rate, cost_model),
    })
}

pub fn evaluate_system(
    records: &[PredictionRecord],
    policy: &Policy,
    objective: Objective,
    cost_model: &CostModel,
) -> Result<SystemReport> {
    let mask = policy.defer_mask(records)?;
    evaluate_mask(records, &mask, objective, cost_model, policy.tag())
}

/// Aligned-column table: Method | F1 | Acc | LLM% | Cost | Latency.
pub fn render_table(reports: &[SystemReport]) -> String {
    let width = reports.iter().map(|r| r.policy.chars().count()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7}  {:>10}",
        "Method", "F1", "Acc", "LLM%", "Cost", "Latency"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 44));
    for r in reports {
        let pad = width - r.policy.chars().count();
        let _ = writeln!(
            out,
            "{}{}  {:>6.3}  {:>6.3}  {:>5.1}%  {:>6.1}x  {:>8.1}ms",
            r.policy,
            " ".repeat(pad),
            r.f1,
            r.accuracy,
            r.deferral_rate * 100.0,
            r.relative_cost,
            r.avg_latency_ms
        );
    }
    out
}
