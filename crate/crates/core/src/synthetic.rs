//! Synthetic binary datasets in which the base model and the expert have
//! complementary strengths.
//!
//! A hidden fraction of rows is "hedged": the base model is usually wrong on
//! them and emits a flat distribution, the text carries a hedging word, and the
//! expert is usually right. On the remaining rows the base model is strong and
//! the expert weaker. Confidence ranges of hedged and plain rows overlap, so
//! the hedging word carries information a confidence cutoff cannot see.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::Lexicon;
use crate::labels::{LabelSpace, PredictionRecord, ProbabilityDistribution};
use crate::seed;

pub const HEDGE_TERMS: [&str; 3] = ["possibly", "suspected", "questionable"];

const FILLER: [&str; 24] = [
    "patient",
    "received",
    "dose",
    "mg",
    "daily",
    "history",
    "of",
    "the",
    "was",
    "noted",
    "with",
    "and",
    "therapy",
    "treatment",
    "clinical",
    "course",
    "report",
    "case",
    "presented",
    "drug",
    "symptoms",
    "admission",
    "liver",
    "renal",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub positive_rate: f64,
    pub hedge_rate: f64,
    pub base_accuracy_hedged: f64,
    pub base_accuracy_plain: f64,
    pub expert_accuracy_hedged: f64,
    pub expert_accuracy_plain: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 5000,
            positive_rate: 0.29,
            hedge_rate: 0.12,
            base_accuracy_hedged: 0.40,
            base_accuracy_plain: 0.96,
            expert_accuracy_hedged: 0.89,
            expert_accuracy_plain: 0.80,
            seed: seed::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub labels: LabelSpace,
    pub records: Vec<PredictionRecord>,
    /// Hidden flag per record.
    pub hedged: Vec<bool>,
}

/// Default lexicon with the outcome group replaced by the hedging words.
pub fn hedge_lexicon() -> Lexicon {
    Lexicon { outcome_terms: HEDGE_TERMS.iter().map(|s| s.to_string()).collect(), ..Lexicon::default() }
}

fn sentence(rng: &mut ChaCha8Rng, hedge: bool) -> String {
    let len = rng.random_range(6..24);
    let mut words: Vec<&str> = (0..len).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect();
    if rng.random_bool(0.3) {
        let at = rng.random_range(0..words.len());
        words.insert(at, "following");
    }
    if hedge {
        let at = rng.random_range(0..words.len());
        words.insert(at, HEDGE_TERMS[rng.random_range(0..HEDGE_TERMS.len())]);
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticDataset {
    let labels = LabelSpace::from_names(&["NEG", "ADE"], Some("ADE")).expect("static label space");
    let mut rng = seed::rng(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n);
    let mut hedged = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let gold = usize::from(rng.random_bool(cfg.positive_rate));
        let hedge = rng.random_bool(cfg.hedge_rate);
        let (base_acc, expert_acc) = if hedge {
            (cfg.base_accuracy_hedged, cfg.expert_accuracy_hedged)
        } else {
            (cfg.base_accuracy_plain, cfg.expert_accuracy_plain)
        };
        let base_right = rng.random_bool(base_acc);
        let expert_right = rng.random_bool(expert_acc);
        let conf: f64 = match (hedge, base_right) {
            (true, _) => rng.random_range(0.5..0.75),
            // Triangular densities on [0.5, 1]: rising for correct rows, falling for errors.
            (false, true) => rng.random_range(0.5..1.0f64).max(rng.random_range(0.5..1.0)),
            (false, false) => rng.random_range(0.5..1.0f64).min(rng.random_range(0.5..1.0)),
        };
        let base_pred = if base_right { gold } else { 1 - gold };
        let mut probs = [0.0; 2];
        probs[base_pred] = conf;
        probs[1 - base_pred] = 1.0 - conf;
        let expert = if expert_right { gold } else { 1 - gold };
        records.push(PredictionRecord {
            id: format!("syn-{i:05}"),
            text: sentence(&mut rng, hedge),
            gold,
            base_probs: ProbabilityDistribution::new(probs.to_vec()).expect("two entries summing to 1"),
            expert_pred: Some(expert),
            group_id: Some(format!("note-{:04}", i / 3)),
        });
        hedged.push(hedge);
    }
    SyntheticDataset { labels, records, hedged }
}
