//! Deferral features: five uncertainty statistics of the base distribution
//! followed by thirteen text features (two lengths and keyword indicators).
//!
//! Layout, in order:
//!
//! | slots | features |
//! |-------|----------|
//! | 0..5  | confidence, entropy, margin, normalized entropy, second-largest probability |
//! | 5..7  | `ln(1 + chars)`, `ln(1 + words)` |
//! | 7..12 | one indicator per causal phrase |
//! | 12..14| one indicator per severity term |
//! | 14..17| one indicator per ADE term |
//! | 17    | any outcome term present |
//!
//! Keyword matching is case-insensitive on word boundaries: text and phrases are
//! split into alphanumeric runs and a phrase matches a contiguous run sequence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ProbabilityDistribution;

pub const FEATURE_COUNT: usize = 18;
pub const UNCERTAINTY_COUNT: usize = 5;

const CAUSAL_COUNT: usize = 5;
const SEVERITY_COUNT: usize = 2;
const ADE_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lexicon {
    pub causal_phrases: Vec<String>,
    pub severity_terms: Vec<String>,
    pub ade_terms: Vec<String>,
    pub outcome_terms: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            causal_phrases: strings(&["induced", "caused by", "due to", "after", "following"]),
            severity_terms: strings(&["severe", "fatal"]),
            ade_terms: strings(&["toxicity", "reaction", "syndrome"]),
            outcome_terms: strings(&["discontinued", "improved", "intolerance"]),
        }
    }
}

impl Lexicon {
    /// Checks phrase hygiene and the group sizes the 18-slot layout depends on.
    /// The outcome group is a single indicator, so it may hold any number of terms.
    pub fn validate(&self) -> Result<()> {
        let groups: [(&str, &[String], Option<usize>); 4] = [
            ("causal_phrases", &self.causal_phrases, Some(CAUSAL_COUNT)),
            ("severity_terms", &self.severity_terms, Some(SEVERITY_COUNT)),
            ("ade_terms", &self.ade_terms, Some(ADE_COUNT)),
            ("outcome_terms", &self.outcome_terms, None),
        ];
        for (name, phrases, expected) in groups {
            match expected {
                Some(n) if phrases.len() != n => {
                    return Err(Error::Config(format!("{name} must list exactly {n} phrases, got {}", phrases.len())))
                }
                None if phrases.is_empty() => return Err(Error::Config(format!("{name} must not be empty"))),
                _ => {}
            }
            for p in phrases {
                if words(p).is_empty() {
                    return Err(Error::Config(format!("{name}: phrase `{p}` has no words")));
                }
                if p.to_lowercase() != *p {
                    return Err(Error::Config(format!("{name}: phrase `{p}` must be lowercase")));
                }
            }
        }
        Ok(())
    }

    /// Loads an override file. `.json` files are parsed as JSON, anything else as TOML.
    /// Missing groups keep their defaults.
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let lex: Lexicon = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw)?
        } else {
            toml::from_str(&raw).map_err(|e| Error::Config(e.to_string()))?
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut names: Vec<String> =
            ["confidence", "entropy", "margin", "normalized_entropy", "second_prob", "log_char_len", "log_word_len"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        for phrase in self.causal_phrases.iter().chain(&self.severity_terms).chain(&self.ade_terms) {
            names.push(format!("has_{}", words(phrase).join("_")));
        }
        names.push("has_outcome_term".to_string());
        FeatureSchema { names }
    }
}

/// Ordered feature names; persisted with a model so scoring can verify alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != FEATURE_COUNT {
            return Err(Error::SchemaMismatch(format!("expected {FEATURE_COUNT} feature names, got {}", names.len())));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::SchemaMismatch(format!("duplicate feature name `{n}`")));
            }
        }
        Ok(FeatureSchema { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Lexicon::default().schema()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn confidence(p: &ProbabilityDistribution) -> f64 {
    p.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Natural-log entropy with 0·ln 0 = 0.
pub fn entropy(p: &ProbabilityDistribution) -> f64 {
    -p.probs().iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn top_two(p: &ProbabilityDistribution) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in p.probs() {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    (first, second)
}

pub fn margin(p: &ProbabilityDistribution) -> f64 {
    let (a, b) = top_two(p);
    a - b
}

pub fn second_prob(p: &ProbabilityDistribution) -> f64 {
    top_two(p).1
}

pub fn normalized_entropy(p: &ProbabilityDistribution) -> f64 {
    entropy(p) / (p.len() as f64).ln()
}

/// Lowercased alphanumeric runs.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

fn contains_phrase(tokens: &[String], phrase: &str) -> bool {
    let needle = words(phrase);
    !needle.is_empty() && tokens.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn indicator(hit: bool) -> f64 {
    if hit {
        1.0
    } else {
        0.0
    }
}

pub fn extract_features(text: &str, p: &ProbabilityDistribution, lexicon: &Lexicon) -> FeatureVector {
    let mut v = [0.0; FEATURE_COUNT];
    v[0] = confidence(p);
    v[1] = entropy(p);
    v[2] = margin(p);
    v[3] = normalized_entropy(p);
    v[4] = second_prob(p);
    v[5] = (text.chars().count() as f64).ln_1p();
    v[6] = (text.split_whitespace().count() as f64).ln_1p();

    let tokens = words(text);
    let mut slot = 7;
    for phrase in lexicon.causal_phrases.iter().chain(&lexicon.severity_terms).chain(&lexicon.ade_terms) {
        v[slot] = indicator(contains_phrase(&tokens, phrase));
        slot += 1;
    }
    v[slot] = indicator(lexicon.outcome_terms.iter().any(|t| contains_phrase(&tokens, t)));
    debug_assert_eq!(slot + 1, FEATURE_COUNT);
    FeatureVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> ProbabilityDistribution {
        ProbabilityDistribution::new(v.to_vec()).unwrap()
    }

    fn slot(name: &str) -> usize {
        FeatureSchema::default().index_of(name).unwrap()
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(confidence(&dist(&[1.0, 0.0])), 1.0);
        assert_eq!(confidence(&dist(&[0.5, 0.5])), 0.5);
        assert_eq!(confidence(&dist(&[0.7, 0.2, 0.1])), 0.7);

        assert_eq!(entropy(&dist(&[1.0, 0.0])), 0.0);
        assert!((entropy(&dist(&[0.5, 0.5])) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((entropy(&dist(&[0.7, 0.2, 0.1])) - 0.8018185525433372).abs() < 1e-12);

        assert!((margin(&dist(&[0.9, 0.1])) - 0.8).abs() < 1e-12);
        let third = 1.0 / 3.0;
        assert_eq!(margin(&dist(&[third, third, third])), 0.0);
        assert!((margin(&dist(&[0.5, 0.3, 0.2])) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn default_schema_layout() {
        let schema = FeatureSchema::default();
        assert_eq!(schema.len(), FEATURE_COUNT);
        assert_eq!(
            schema.names(),
            [
                "confidence",
                "entropy",
                "margin",
                "normalized_entropy",
                "second_prob",
                "log_char_len",
                "log_word_len",
                "has_induced",
                "has_caused_by",
                "has_due_to",
                "has_after",
                "has_following",
                "has_severe",
                "has_fatal",
                "has_toxicity",
                "has_reaction",
                "has_syndrome",
                "has_outcome_term",
            ]
        );
    }

    #[test]
    fn empty_text() {
        let fv = extract_features("", &dist(&[0.5, 0.5]), &Lexicon::default());
        assert_eq!(fv.0[slot("log_char_len")], 0.0);
        assert_eq!(fv.0[slot("log_word_len")], 0.0);
        assert!(fv.0[7..].iter().all(|&x| x == 0.0));
        assert_eq!(fv.0[slot("confidence")], 0.5);
    }

    #[test]
    fn keyword_and_length_features() {
        let lex = Lexicon::default();
        let fv = extract_features("Severe nausea after taking cisplatin", &dist(&[0.5, 0.5]), &lex);
        assert_eq!(fv.0[slot("has_severe")], 1.0);
        assert_eq!(fv.0[slot("has_after")], 1.0);
        assert_eq!(fv.0[slot("has_following")], 0.0);
        // five whitespace tokens, 36 characters
        assert!((fv.0[slot("log_word_len")] - 1.791759469228055).abs() < 1e-12);
        assert!((fv.0[slot("log_char_len")] - 3.6109179126442243).abs() < 1e-12);

        let fv = extract_features("Rash caused by amoxicillin", &dist(&[0.05, 0.95]), &lex);
        assert_eq!(fv.0[slot("has_caused_by")], 1.0);
        assert_eq!(fv.0[slot("confidence")], 0.95);
        assert!((fv.0[slot("margin")] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn word_boundaries_and_case() {
        let lex = Lexicon::default();
        let p = dist(&[0.5, 0.5]);
        let fv = extract_features("Afterward the patient improved", &p, &lex);
        assert_eq!(fv.0[slot("has_after")], 0.0);
        assert_eq!(fv.0[slot("has_outcome_term")], 1.0);
        let fv = extract_features("rash CAUSED\tBY drug; fatal.", &p, &lex);
        assert_eq!(fv.0[slot("has_caused_by")], 1.0);
        assert_eq!(fv.0[slot("has_fatal")], 1.0);
        // phrase words must be contiguous
        let fv = extract_features("caused mostly by", &p, &lex);
        assert_eq!(fv.0[slot("has_caused_by")], 0.0);
    }

    #[test]
    fn lexicon_validation() {
        assert!(Lexicon::default().validate().is_ok());
        let mut lex = Lexicon::default();
        lex.severity_terms.push("mild".into());
        assert!(lex.validate().is_err());
        let mut lex = Lexicon::default();
        lex.ade_terms[0] = "Toxicity".into();
        assert!(lex.validate().is_err());
        let mut lex = Lexicon { outcome_terms: vec!["possibly".into(), "suspected".into()], ..Lexicon::default() };
        assert!(lex.validate().is_ok());
        lex.outcome_terms.clear();
        assert!(lex.validate().is_err());
    }

    #[test]
    fn lexicon_from_toml_keeps_missing_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.toml");
        std::fs::write(&path, "outcome_terms = [\"tolerated\", \"stable on\"]\n").unwrap();
        let lex = Lexicon::from_path(&path).unwrap();
        assert_eq!(lex.causal_phrases, Lexicon::default().causal_phrases);
        assert_eq!(lex.outcome_terms, vec!["tolerated", "stable on"]);

        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(Lexicon::from_path(&path).is_err());
    }

    fn distribution(k: usize) -> impl Strategy<Value = ProbabilityDistribution> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-9).then(|| ProbabilityDistribution::new(raw.iter().map(|x| x / s).collect()).ok())?
        })
    }

    proptest! {
        #[test]
        fn features_are_finite_and_indicators_binary(text in ".{0,80}", p in distribution(3)) {
            let fv = extract_features(&text, &p, &Lexicon::default());
            prop_assert!(fv.0.iter().all(|x| x.is_finite()));
            prop_assert!(fv.0[5] >= 0.0 && fv.0[6] >= 0.0);
            prop_assert!(fv.0[7..].iter().all(|&x| x == 0.0 || x == 1.0));
        }

        #[test]
        fn appending_unmatched_text_keeps_indicators(text in "[a-z ]{0,40}", p in distribution(2)) {
            let lex = Lexicon::default();
            let a = extract_features(&text, &p, &lex);
            let b = extract_features(&format!("{text} zzq qqz"), &p, &lex);
            prop_assert_eq!(&a.0[7..], &b.0[7..]);
        }

        #[test]
        fn binary_second_prob_at_most_half(p in distribution(2)) {
            let s = second_prob(&p);
            prop_assert!((0.0..=0.5 + 1e-12).contains(&s));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&normalized_entropy(&p)));
        }
    }
}
