use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::standardize::Standardizer;
use super::train::{train_error_model, TrainingConfig};
use super::{deferral_probability_standardized, error_labels, DeferralModel};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, Lexicon};
use crate::labels::{LabelSpace, PredictionRecord};
use crate::seed;

/// Splits indices `0..labels.len()` into `k` folds, stratified by label.
///
/// Each class is shuffled with the seeded stream and dealt round-robin; the
/// dealing position carries over between classes, so per-class and total fold
/// sizes each differ by at most one. Folds are returned sorted.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} available rows", labels.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// One fold's bookkeeping: which rows trained the model and which it scored.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold {
    /// Deferral probability per record, each from a model that never saw it.
    pub probs: Vec<f64>,
    pub folds: Vec<FoldRun>,
}

/// Fits a standardizer and an error model on the given rows.
pub(crate) fn fit_on(
    features: &[&FeatureVector],
    errors: &[bool],
    config: &TrainingConfig,
) -> Result<(Standardizer, super::train::TrainedWeights)> {
    let raw: Vec<&[f64]> = features.iter().map(|f| f.values()).collect();
    let standardizer = Standardizer::fit(&raw)?;
    let z = standardizer.transform_all(&raw)?;
    let fit = train_error_model(&z, errors, config)?;
    Ok((standardizer, fit))
}

/// Out-of-fold deferral probabilities with folds stratified on the base model's
/// error indicator.
pub fn out_of_fold_defer_probs(
    records: &[PredictionRecord],
    lexicon: &Lexicon,
    config: &TrainingConfig,
    k: usize,
) -> Result<OutOfFold> {
    let errors = error_labels(records);
    if errors.iter().all(|&e| !e) {
        return Err(Error::DegenerateLabels(
            "the base model is correct on every record; there are no errors to learn".into(),
        ));
    }
    let strata: Vec<usize> = errors.iter().map(|&e| usize::from(e)).collect();
    let folds = stratified_kfold(&strata, k, seed::derive_seed(config.seed, seed::STREAM_FOLDS))?;
    let features: Vec<FeatureVector> =
        records.iter().map(|r| extract_features(&r.text, &r.base_probs, lexicon)).collect();

    let mut probs = vec![f64::NAN; records.len()];
    let mut runs = Vec::with_capacity(k);
    for (fold, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; records.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<usize> = (0..records.len()).filter(|&i| !in_test[i]).collect();

        let train_feats: Vec<&FeatureVector> = train.iter().map(|&i| &features[i]).collect();
        let train_errs: Vec<bool> = train.iter().map(|&i| errors[i]).collect();
        let (standardizer, fit) = fit_on(&train_feats, &train_errs, config).map_err(|e| match e {
            Error::DegenerateLabels(msg) => Error::DegenerateLabels(format!("fold {fold}: {msg}")),
            other => other,
        })?;
        for &i in test {
            probs[i] = deferral_probability_standardized(
                &standardizer.transform(features[i].values())?,
                &fit.weights,
                fit.intercept,
            );
        }
        runs.push(FoldRun { fold, train, test: test.clone(), converged: fit.converged });
    }
    Ok(OutOfFold { probs, folds: runs })
}

/// Fits the final model on all records; the threshold is left at 0.5 for the caller to tune.
pub fn fit_deferral_model(
    records: &[PredictionRecord],
    labels: &LabelSpace,
    lexicon: &Lexicon,
    config: &TrainingConfig,
) -> Result<(DeferralModel, bool)> {
    lexicon.validate()?;
    for r in records {
        r.validate(labels)?;
    }
    let errors = error_labels(records);
    let features: Vec<FeatureVector> =
        records.iter().map(|r| extract_features(&r.text, &r.base_probs, lexicon)).collect();
    let refs: Vec<&FeatureVector> = features.iter().collect();
    let (standardizer, fit) = fit_on(&refs, &errors, config)?;
    let model = DeferralModel::new(lexicon.clone(), standardizer, fit.weights, fit.intercept, 0.5, labels.clone())?;
    Ok((model, fit.converged))
}
