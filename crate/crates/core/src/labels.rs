//! Label spaces, softmax distributions and labeled prediction records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of a distribution's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Ordered set of class names, optionally designating a positive class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRepr", into = "LabelSpaceRepr")]
pub struct LabelSpace {
    class_names: Vec<String>,
    positive_index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceRepr {
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positive: Option<String>,
}

impl TryFrom<LabelSpaceRepr> for LabelSpace {
    type Error = Error;

    fn try_from(repr: LabelSpaceRepr) -> Result<Self> {
        let space = LabelSpace::new(repr.classes, None)?;
        match repr.positive {
            None => Ok(space),
            Some(name) => {
                let idx = space
                    .index_of(&name)
                    .ok_or_else(|| Error::invalid(format!("positive class `{name}` is not a declared class")))?;
                Ok(space.with_positive(idx)?)
            }
        }
    }
}

impl From<LabelSpace> for LabelSpaceRepr {
    fn from(space: LabelSpace) -> Self {
        let positive = space.positive_index.map(|i| space.class_names[i].clone());
        LabelSpaceRepr { classes: space.class_names, positive }
    }
}

impl LabelSpace {
    pub fn new(class_names: Vec<String>, positive_index: Option<usize>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::invalid(format!("a label space needs at least 2 classes, got {}", class_names.len())));
        }
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::invalid(format!("class name {i} is empty")));
            }
            if class_names[..i].contains(name) {
                return Err(Error::invalid(format!("duplicate class name `{name}`")));
            }
        }
        let space = LabelSpace { class_names, positive_index: None };
        match positive_index {
            Some(p) => space.with_positive(p),
            None => Ok(space),
        }
    }

    /// Builds a label space from string slices; handy for tests and fixed tasks.
    pub fn from_names<S: AsRef<str>>(names: &[S], positive: Option<&str>) -> Result<Self> {
        let space = LabelSpace::new(names.iter().map(|s| s.as_ref().to_string()).collect(), None)?;
        match positive {
            Some(name) => {
                let idx =
                    space.index_of(name).ok_or_else(|| Error::invalid(format!("unknown positive class `{name}`")))?;
                space.with_positive(idx)
            }
            None => Ok(space),
        }
    }

    pub fn with_positive(mut self, index: usize) -> Result<Self> {
        if index >= self.class_names.len() {
            return Err(Error::invalid(format!(
                "positive index {index} out of range for {} classes",
                self.class_names.len()
            )));
        }
        self.positive_index = Some(index);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn positive_index(&self) -> Option<usize> {
        self.positive_index
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.class_names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("class index {index} out of range for {} classes", self.len())))
        }
    }

    /// The class used for positive-class F1: the designated positive class,
    /// or index 1 of a binary space.
    pub fn f1_positive(&self) -> Result<usize> {
        match (self.positive_index, self.len()) {
            (Some(p), _) => Ok(p),
            (None, 2) => Ok(1),
            (None, k) => Err(Error::invalid(format!(
                "positive-class F1 on a {k}-class label space needs a designated positive class"
            ))),
        }
    }
}

/// A softmax output: finite entries in [0, 1] summing to 1 within [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityDistribution(Vec<f64>);

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!("need at least 2 entries, got {}", probs.len())));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidDistribution(format!("entry {i} = {p} is outside [0, 1]")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE:e}"
            )));
        }
        Ok(ProbabilityDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The base classifier's decision. Ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        base_prediction(&self.0)
    }

    pub fn check_against(&self, labels: &LabelSpace) -> Result<()> {
        if self.len() != labels.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities for a {}-class label space",
                self.len(),
                labels.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ProbabilityDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbabilityDistribution::new(v)
    }
}

impl From<ProbabilityDistribution> for Vec<f64> {
    fn from(d: ProbabilityDistribution) -> Self {
        d.0
    }
}

/// Index of the largest entry, lowest index on ties.
///
/// Works on unnormalized scores too, which is what makes it invariant to
/// positive rescaling.
pub fn base_prediction(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// One labeled instance with the base model's distribution and, optionally,
/// the expert's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub text: String,
    pub gold: usize,
    pub base_probs: ProbabilityDistribution,
    pub expert_pred: Option<usize>,
    pub group_id: Option<String>,
}

impl PredictionRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold: usize,
        base_probs: ProbabilityDistribution,
        expert_pred: Option<usize>,
    ) -> Self {
        PredictionRecord { id: id.into(), text: text.into(), gold, base_probs, expert_pred, group_id: None }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group_id = Some(group.into());
        self
    }

    pub fn base_pred(&self) -> usize {
        self.base_probs.argmax()
    }

    /// 1 when the base model's argmax differs from the gold label.
    pub fn base_erred(&self) -> bool {
        self.base_pred() != self.gold
    }

    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("record id is empty"));
        }
        labels.check_index(self.gold)?;
        if let Some(e) = self.expert_pred {
            labels.check_index(e)?;
        }
        self.base_probs.check_against(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> ProbabilityDistribution {
        ProbabilityDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(dist(&[0.1, 0.9]).argmax(), 1);
        assert_eq!(dist(&[0.5, 0.5]).argmax(), 0);
        assert_eq!(dist(&[0.2, 0.3, 0.5]).argmax(), 2);
    }

    #[test]
    fn distribution_rejects_bad_sums_and_ranges() {
        assert!(ProbabilityDistribution::new(vec![0.4, 0.4]).is_err());
        assert!(ProbabilityDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(ProbabilityDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbabilityDistribution::new(vec![1.0]).is_err());
        assert!(ProbabilityDistribution::new(vec![0.5, 0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn label_space_invariants() {
        assert!(LabelSpace::from_names(&["a"], None).is_err());
        assert!(LabelSpace::from_names(&["a", "a"], None).is_err());
        assert!(LabelSpace::from_names(&["a", ""], None).is_err());
        assert!(LabelSpace::new(vec!["a".into(), "b".into()], Some(2)).is_err());

        let ls = LabelSpace::from_names(&["EFFECTIVE", "ADVERSE", "NEUTRAL"], None).unwrap();
        assert!(ls.f1_positive().is_err());
        let ls = ls.with_positive(1).unwrap();
        assert_eq!(ls.f1_positive().unwrap(), 1);
        assert_eq!(LabelSpace::from_names(&["no", "yes"], None).unwrap().f1_positive().unwrap(), 1);
    }

    #[test]
    fn label_space_json_shape() {
        let ls = LabelSpace::from_names(&["NEG", "ADE"], Some("ADE")).unwrap();
        let json = serde_json::to_string(&ls).unwrap();
        assert_eq!(json, r#"{"classes":["NEG","ADE"],"positive":"ADE"}"#);
        let back: LabelSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ls);
        assert!(serde_json::from_str::<LabelSpace>(r#"{"classes":["a","b"],"positive":"c"}"#).is_err());
    }
}
