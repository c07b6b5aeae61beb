//! The learned deferral policy: an error predictor over deferral features plus
//! a tuned threshold τ. A record goes to the expert iff `d(x) ≥ τ`.

mod cv;
mod standardize;
mod threshold;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cv::{fit_deferral_model, out_of_fold_defer_probs, stratified_kfold, FoldRun, OutOfFold};
pub use standardize::{Standardizer, MIN_STD};
pub use threshold::{tune_threshold, ThresholdChoice, NEVER_DEFER};
pub use train::{
    balanced_weights, sigmoid, train_error_model, training_objective, ClassWeighting, TrainedWeights, TrainingConfig,
};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureSchema, Lexicon};
use crate::labels::{LabelSpace, PredictionRecord, ProbabilityDistribution};

pub const FORMAT_VERSION: u32 = 1;

/// Scores are clamped to `[SCORE_FLOOR, 1 - SCORE_FLOOR]` so they stay strictly inside (0, 1).
const SCORE_FLOOR: f64 = 1e-15;

/// `e(x) = 1[argmax(base_probs) ≠ gold]` for every record.
pub fn error_labels(records: &[PredictionRecord]) -> Vec<bool> {
    records.iter().map(PredictionRecord::base_erred).collect()
}

pub(crate) fn deferral_probability_standardized(z: &[f64], weights: &[f64], intercept: f64) -> f64 {
    let logit = z.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() + intercept;
    sigmoid(logit).clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
}

/// Persisted routing policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralModel {
    pub format_version: u32,
    pub schema: FeatureSchema,
    pub lexicon: Lexicon,
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub threshold: f64,
    pub label_space: LabelSpace,
}

impl DeferralModel {
    pub fn new(
        lexicon: Lexicon,
        standardizer: Standardizer,
        weights: Vec<f64>,
        intercept: f64,
        threshold: f64,
        label_space: LabelSpace,
    ) -> Result<Self> {
        let model = DeferralModel {
            format_version: FORMAT_VERSION,
            schema: lexicon.schema(),
            lexicon,
            standardizer,
            weights,
            intercept,
            threshold,
            label_space,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion { found: self.format_version, expected: FORMAT_VERSION });
        }
        self.lexicon.validate()?;
        if self.schema != self.lexicon.schema() {
            return Err(Error::SchemaMismatch("feature names do not match the lexicon".into()));
        }
        if self.weights.len() != self.schema.len() || self.standardizer.dim() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} weights and {} standardizer dims for {} features",
                self.weights.len(),
                self.standardizer.dim(),
                self.schema.len()
            )));
        }
        self.standardizer.validate()?;
        if self.weights.iter().any(|w| !w.is_finite()) || !self.intercept.is_finite() {
            return Err(Error::invalid("model coefficients must be finite"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    /// `d(x)` for a raw (unstandardized) feature row.
    pub fn deferral_probability(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "feature row has {} values, model expects {}",
                features.len(),
                self.weights.len()
            )));
        }
        let z = self.standardizer.transform(features)?;
        Ok(deferral_probability_standardized(&z, &self.weights, self.intercept))
    }

    pub fn score(&self, text: &str, probs: &ProbabilityDistribution) -> Result<f64> {
        probs.check_against(&self.label_space)?;
        let fv = extract_features(text, probs, &self.lexicon);
        self.deferral_probability(fv.values())
    }

    pub fn score_record(&self, record: &PredictionRecord) -> Result<f64> {
        self.score(&record.text, &record.base_probs)
    }

    pub fn defers(&self, score: f64) -> bool {
        score >= self.threshold
    }

    /// Standardized coefficients in schema order; positive values push toward deferral.
    pub fn report_coefficients(&self) -> Vec<(String, f64)> {
        self.schema.names().iter().cloned().zip(self.weights.iter().copied()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| self.weights[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let model: DeferralModel = serde_json::from_str(raw)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
