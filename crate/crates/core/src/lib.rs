//! Learned deferral between a cheap base classifier and a remote expert model.
//!
//! A logistic error predictor over uncertainty and keyword features estimates
//! how likely the base classifier is to be wrong; instances whose score reaches
//! a tuned threshold are routed to the expert. The crate covers feature
//! extraction, training and threshold tuning, baselines, evaluation with a
//! cost/latency model, dataset ingestion and splitting, and a live HTTP router.

pub mod baselines;
pub mod deferral;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingestion;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod service;
pub mod synthetic;

pub use error::{Error, Result};
pub use labels::{LabelSpace, PredictionRecord, ProbabilityDistribution};
