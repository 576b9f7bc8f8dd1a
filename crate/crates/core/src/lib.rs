//! Novelty-driven test selection for functional coverage closure.
//!
//! Constrained-random tests are ranked by how novel they look relative to the
//! tests already simulated, and the most novel batch is simulated next. Three
//! neural scorers are provided (autoencoder reconstruction error, hidden-neuron
//! density, and a coverage-novelty regressor), together with a synthetic
//! coverage oracle and the experiment harness used to compare them against
//! random ordering.

pub mod coverage;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod scorers;
pub mod seed;
pub mod selection;
pub mod sim;

pub use coverage::{CoverageRecord, CumulativeCoverage, HitCounts};
pub use encoding::{RawTest, RawValue, Schema, Standardizer, TestVector};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, ExperimentReport};
pub use nn::{Activation, LayerSpec, Loss, MlpModel, Optimizer, TrainConfig};
pub use scorers::{NoveltyScore, NoveltyScorer, ScorerConfig, ScorerKind};
pub use selection::{run_loop, CoverageOracle, LoopConfig, LoopSeeds, LoopState, SelectionLoop, SelectionPolicy};
pub use sim::{DutConfig, SyntheticDut};
