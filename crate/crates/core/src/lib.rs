//! Uncertainty toolkit for automatic sleep-stage scoring.
//!
//! Given per-epoch classifier outputs for one or more EEG-EOG channel pairs,
//! the crate computes softmax-based uncertainty measures, trains an LSTM
//! confidence network that predicts the true-class probability (TCP) of each
//! epoch, evaluates how well the scores single out epochs that disagree with
//! a human scorer, and simulates the effort of a threshold-driven review.

pub mod bootstrap;
pub mod confnet;
pub mod data;
pub mod error;
pub mod features;
pub mod io;
pub mod measures;
pub mod metrics;
pub mod render;
pub mod review;
pub mod rng;
pub mod scores;
pub mod stats;
pub mod synth;

pub use data::{Dataset, Diagnosis, DomainTag, PairOutput, Recording, StageLabel};
pub use error::{Error, Result};
pub use scores::{ScoreSource, UncertaintyScoreSeries};
