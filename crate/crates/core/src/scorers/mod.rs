//! Novelty scorers.
//!
//! Each scorer is trained on the simulated tests of one round and then ranks
//! the remaining tests. A trained scorer is immutable; retraining builds a new
//! value. Scores are only comparable within one scorer instance.

mod autoencoder;
mod coverage_novelty;
mod density;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::CoverageRecord;
use crate::encoding::TestVector;
use crate::error::{Error, Result};
use crate::nn::{Activation, Loss, TrainConfig, DEFAULT_LEAKY_SLOPE};

pub use autoencoder::{autoencoder_score, AutoencoderScorer};
pub use coverage_novelty::{coverage_novelty_label, coverage_novelty_labels, CoverageNoveltyScorer};
pub use density::{knn_distance_sum, DensityScorer};

/// Nonnegative; higher means more novel relative to the training set.
pub type NoveltyScore = f64;

/// Rows scored per parallel work item. Fixed so results never depend on the
/// number of worker threads.
pub const SCORE_CHUNK: usize = 256;

pub const DEFAULT_KNN_K: usize = 15;
pub const DEFAULT_DENSITY_EVENTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Autoencoder,
    Density,
    CoverageNovelty,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 3] = [
        ScorerKind::Autoencoder,
        ScorerKind::Density,
        ScorerKind::CoverageNovelty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Autoencoder => "autoencoder",
            ScorerKind::Density => "density",
            ScorerKind::CoverageNovelty => "coverage-novelty",
        }
    }

    /// Layer widths for an input width `d`.
    ///
    /// At `d = 265` these are the reference architectures; at other widths
    /// each hidden layer keeps the same ratio (twice, half of, or equal to)
    /// to its neighbour.
    pub fn default_widths(self, d: usize, density_outputs: usize) -> Vec<usize> {
        let d = d.max(1);
        if d == 265 {
            return match self {
                ScorerKind::Autoencoder => vec![265, 128, 64, 128, 265],
                ScorerKind::Density => vec![265, 512, 265, 128, density_outputs],
                ScorerKind::CoverageNovelty => vec![265, 265, 128, 64, 1],
            };
        }
        let half = (d / 2).max(1);
        let quarter = (d / 4).max(1);
        match self {
            ScorerKind::Autoencoder => vec![d, half, quarter, half, d],
            ScorerKind::Density => vec![d, 2 * d, d, half, density_outputs],
            ScorerKind::CoverageNovelty => vec![d, d, half, quarter, 1],
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autoencoder" | "ae" => Ok(ScorerKind::Autoencoder),
            "density" | "ds" => Ok(ScorerKind::Density),
            "coverage-novelty" | "cn" => Ok(ScorerKind::CoverageNovelty),
            other => Err(Error::InvalidConfig(format!("unknown scorer `{other}`"))),
        }
    }
}

pub trait NoveltyScorer: Send + Sync {
    fn score(&self, v: &TestVector) -> Result<NoveltyScore>;

    /// Mean per-sample loss of the final training epoch.
    fn training_loss(&self) -> f64;

    /// Scores one chunk. Implementations may batch the forward pass.
    fn score_chunk(&self, vs: &[TestVector]) -> Result<Vec<NoveltyScore>> {
        vs.iter().map(|v| self.score(v)).collect()
    }

    /// Scores every vector, fanning out over fixed-size chunks.
    fn score_all(&self, vs: &[TestVector]) -> Result<Vec<NoveltyScore>> {
        let parts: Vec<Result<Vec<f64>>> = vs.par_chunks(SCORE_CHUNK).map(|c| self.score_chunk(c)).collect();
        let mut out = Vec::with_capacity(vs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Everything needed to train any of the three scorers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Explicit layer widths; `None` uses [`ScorerKind::default_widths`].
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    pub train: TrainConfig,
    pub leaky_slope: f64,
    pub knn_k: usize,
    pub density_events: usize,
}

impl ScorerConfig {
    pub fn new(kind: ScorerKind) -> Self {
        ScorerConfig {
            kind,
            widths: None,
            train: TrainConfig::default(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            knn_k: DEFAULT_KNN_K,
            density_events: DEFAULT_DENSITY_EVENTS,
        }
    }

    pub fn hidden_activation(&self) -> Activation {
        Activation::LeakyRelu {
            slope: self.leaky_slope,
        }
    }

    pub fn widths_for(&self, d: usize, num_events: usize) -> Vec<usize> {
        self.widths
            .clone()
            .unwrap_or_else(|| self.kind.default_widths(d, self.density_events.min(num_events).max(1)))
    }

    /// Trains a fresh scorer on standardized simulated vectors.
    ///
    /// `coverage[i]` belongs to `simulated[i]`; `sampled_events` is only used
    /// by the density scorer.
    pub fn train(
        &self,
        simulated: &[TestVector],
        coverage: &[CoverageRecord],
        sampled_events: &[usize],
        seed: u64,
    ) -> Result<Box<dyn NoveltyScorer>> {
        let d = simulated.first().ok_or(Error::Empty("simulated set"))?.width();
        let num_events = coverage.first().map_or(0, |c| c.num_events());
        let widths = self.widths_for(d, num_events);
        Ok(match self.kind {
            ScorerKind::Autoencoder => Box::new(AutoencoderScorer::train(
                simulated,
                &widths,
                self.hidden_activation(),
                &self.train.with_loss(Loss::MeanSquaredError),
                seed,
            )?),
            ScorerKind::Density => Box::new(DensityScorer::train(
                simulated,
                coverage,
                sampled_events,
                &widths,
                self.hidden_activation(),
                &self.train.with_loss(Loss::BinaryCrossEntropy),
                self.knn_k,
                seed,
            )?),
            ScorerKind::CoverageNovelty => Box::new(CoverageNoveltyScorer::train(
                simulated,
                coverage,
                &widths,
                self.hidden_activation(),
                &self.train.with_loss(Loss::MeanSquaredError),
                seed,
            )?),
        })
    }
}

/// A serialized trained scorer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScorerCheckpoint {
    Autoencoder(AutoencoderScorer),
    Density(DensityScorer),
    CoverageNovelty(CoverageNoveltyScorer),
}

impl ScorerCheckpoint {
    pub fn kind(&self) -> ScorerKind {
        match self {
            ScorerCheckpoint::Autoencoder(_) => ScorerKind::Autoencoder,
            ScorerCheckpoint::Density(_) => ScorerKind::Density,
            ScorerCheckpoint::CoverageNovelty(_) => ScorerKind::CoverageNovelty,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn into_scorer(self) -> Box<dyn NoveltyScorer> {
        match self {
            ScorerCheckpoint::Autoencoder(s) => Box::new(s),
            ScorerCheckpoint::Density(s) => Box::new(s),
            ScorerCheckpoint::CoverageNovelty(s) => Box::new(s),
        }
    }
}

fn check_width(expected: usize, v: &TestVector) -> Result<()> {
    if v.width() != expected {
        return Err(Error::dims("scored vector", expected, v.width()));
    }
    Ok(())
}
