//! End-to-end training: scores for tuning, threshold selection, final fit.
//!
//! In `KFold` mode τ is tuned on out-of-fold scores, so no row's score comes
//! from a model that saw it. `SingleFit` tunes on in-sample scores of the final
//! model; it is faster and biased toward deferring too little.

use serde::{Deserialize, Serialize};

use crate::baselines::Policy;
use crate::deferral::{
    error_labels, fit_deferral_model, out_of_fold_defer_probs, tune_threshold, DeferralModel, ThresholdChoice,
    TrainingConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_mask, CostModel, SystemReport};
use crate::features::Lexicon;
use crate::labels::{LabelSpace, PredictionRecord};
use crate::metrics::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    KFold { k: usize },
    SingleFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub n: usize,
    pub base_error_rate: f64,
    pub threshold: ThresholdChoice,
    /// How well `d(x) ≥ τ` flags base-model errors on the tuning scores.
    pub error_precision: f64,
    pub error_recall: f64,
    pub coefficients: Vec<(String, f64)>,
    pub intercept: f64,
    pub converged: bool,
    /// Base model alone on the training data.
    pub base_only: SystemReport,
    /// The routed system on the tuning scores.
    pub routed: SystemReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DeferralModel,
    /// Scores τ was tuned on, one per record.
    pub tuning_scores: Vec<f64>,
    pub report: TrainReport,
}

fn expert_preds(records: &[PredictionRecord]) -> Result<Vec<usize>> {
    records.iter().map(|r| r.expert_pred.ok_or_else(|| Error::MissingExpert { id: r.id.clone() })).collect()
}

/// Precision and recall of `flags` as a detector of `errors`; 0 when undefined.
pub fn detection_scores(flags: &[bool], errors: &[bool]) -> (f64, f64) {
    let tp = flags.iter().zip(errors).filter(|&(&f, &e)| f && e).count() as f64;
    let flagged = flags.iter().filter(|&&f| f).count() as f64;
    let actual = errors.iter().filter(|&&e| e).count() as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    (ratio(tp, flagged), ratio(tp, actual))
}

pub fn train_router(
    records: &[PredictionRecord],
    labels: &LabelSpace,
    lexicon: &Lexicon,
    config: &TrainingConfig,
    mode: TrainMode,
    objective: Objective,
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no training records".into()));
    }
    config.validate()?;
    let experts = expert_preds(records)?;
    let (model, converged) = fit_deferral_model(records, labels, lexicon, config)?;

    let (scores, mode_name, converged) = match mode {
        TrainMode::KFold { k } => {
            let oof = out_of_fold_defer_probs(records, lexicon, config, k)?;
            let all = converged && oof.folds.iter().all(|f| f.converged);
            (oof.probs, format!("kfold (k={k})"), all)
        }
        TrainMode::SingleFit => {
            let s = records.iter().map(|r| model.score_record(r)).collect::<Result<Vec<_>>>()?;
            (s, "single-fit".to_string(), converged)
        }
    };
    if !converged {
        tracing::warn!("optimizer hit the iteration cap before converging");
    }

    let base: Vec<usize> = records.iter().map(PredictionRecord::base_pred).collect();
    let golds: Vec<usize> = records.iter().map(|r| r.gold).collect();
    let choice = tune_threshold(&scores, &base, &experts, &golds, objective)?;
    let model = model.with_threshold(choice.threshold)?;

    let errors = error_labels(records);
    let flags: Vec<bool> = scores.iter().map(|&s| s >= choice.threshold).collect();
    let (error_precision, error_recall) = detection_scores(&flags, &errors);
    let cm = CostModel::default();
    let base_only = evaluate_mask(records, &vec![false; records.len()], objective, &cm, Policy::Never.tag())?;
    let routed = evaluate_mask(records, &flags, objective, &cm, "learned")?;

    let report = TrainReport {
        mode: mode_name,
        n: records.len(),
        base_error_rate: errors.iter().filter(|&&e| e).count() as f64 / records.len() as f64,
        threshold: choice,
        error_precision,
        error_recall,
        coefficients: model.report_coefficients(),
        intercept: model.intercept,
        converged,
        base_only,
        routed,
    };
    Ok(TrainOutcome { model, tuning_scores: scores, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, hedge_lexicon, SyntheticConfig};

    #[test]
    fn detection_scores_examples() {
        let (p, r) = detection_scores(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((p, r), (0.5, 0.5));
        assert_eq!(detection_scores(&[false, false], &[false, false]), (0.0, 0.0));
    }

    #[test]
    fn routed_report_matches_tuned_objective() {
        let data = generate(&SyntheticConfig { n: 600, ..Default::default() });
        let objective = Objective::BinaryF1 { positive_index: 1 };
        for mode in [TrainMode::KFold { k: 3 }, TrainMode::SingleFit] {
            let out = train_router(
                &data.records,
                &data.labels,
                &hedge_lexicon(),
                &TrainingConfig::default(),
                mode,
                objective,
            )
            .unwrap();
            assert!((out.report.routed.f1 - out.report.threshold.objective).abs() < 1e-12);
            assert!(out.report.routed.f1 >= out.report.base_only.f1);
            assert_eq!(out.model.threshold, out.report.threshold.threshold);
        }
    }

    #[test]
    fn missing_expert_is_reported() {
        let mut data = generate(&SyntheticConfig { n: 50, ..Default::default() });
        data.records[7].expert_pred = None;
        let err = train_router(
            &data.records,
            &data.labels,
            &Lexicon::default(),
            &TrainingConfig::default(),
            TrainMode::SingleFit,
            Objective::BinaryF1 { positive_index: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingExpert { id } if id == "syn-00007"));
    }
}
