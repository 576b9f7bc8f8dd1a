use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_width, NoveltyScore, NoveltyScorer};
use crate::coverage::{CoverageRecord, HitCounts};
use crate::encoding::TestVector;
use crate::error::{Error, Result};
use crate::nn::{layers_from_widths, rows_to_matrix, Activation, MlpModel, TrainConfig};

/// Training label of one simulated test: each event it hits contributes
/// `count^(-3/2)`, so rarely hit events dominate.
pub fn coverage_novelty_label(hits: &CoverageRecord, counts: &HitCounts) -> Result<f64> {
    if hits.num_events() != counts.len() {
        return Err(Error::dims("hit counts", hits.num_events(), counts.len()));
    }
    let mut n = 0.0;
    for e in hits.hit_events() {
        let c = counts.counts[e];
        if c == 0 {
            return Err(Error::Integrity(format!(
                "test {} hits event {e} but its hit count is zero",
                hits.test_id
            )));
        }
        let c = c as f64;
        n += 1.0 / (c * c.sqrt());
    }
    Ok(n)
}

/// Labels for a whole simulated set, counting hits over that same set.
pub fn coverage_novelty_labels(coverage: &[CoverageRecord]) -> Result<(HitCounts, Vec<f64>)> {
    let num_events = coverage.first().ok_or(Error::Empty("coverage records"))?.num_events();
    let counts = HitCounts::from_records(num_events, coverage)?;
    let labels = coverage
        .iter()
        .map(|c| coverage_novelty_label(c, &counts))
        .collect::<Result<_>>()?;
    Ok((counts, labels))
}

/// Single-output regressor predicting a test's coverage-novelty label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageNoveltyScorer {
    pub model: MlpModel,
    pub counts: HitCounts,
    pub labels: Vec<f64>,
    pub loss: f64,
}

impl CoverageNoveltyScorer {
    pub fn train(
        simulated: &[TestVector],
        coverage: &[CoverageRecord],
        widths: &[usize],
        hidden: Activation,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let d = simulated.first().ok_or(Error::Empty("simulated set"))?.width();
        if coverage.len() != simulated.len() {
            return Err(Error::dims("coverage records", simulated.len(), coverage.len()));
        }
        if let Some((v, c)) = simulated.iter().zip(coverage).find(|(v, c)| v.test_id != c.test_id) {
            return Err(Error::Integrity(format!(
                "coverage for test {} is paired with vector {}",
                c.test_id, v.test_id
            )));
        }
        if widths.first() != Some(&d) || widths.last() != Some(&1) {
            return Err(Error::InvalidConfig(format!(
                "coverage-novelty widths {widths:?} must map input width {d} to one output"
            )));
        }
        let (counts, labels) = coverage_novelty_labels(coverage)?;
        let x = rows_to_matrix(simulated, d)?;
        let y = Array2::from_shape_vec((labels.len(), 1), labels.clone()).expect("column shape");
        let mut model = MlpModel::init(layers_from_widths(widths, hidden, Activation::Identity), seed)?;
        let loss = model.train(x.view(), y.view(), cfg)?;
        Ok(CoverageNoveltyScorer {
            model,
            counts,
            labels,
            loss,
        })
    }
}

impl NoveltyScorer for CoverageNoveltyScorer {
    fn score(&self, v: &TestVector) -> Result<NoveltyScore> {
        check_width(self.model.input_width(), v)?;
        Ok(self.model.forward(&v.values)?.output[0].max(0.0))
    }

    fn training_loss(&self) -> f64 {
        self.loss
    }

    fn score_chunk(&self, vs: &[TestVector]) -> Result<Vec<NoveltyScore>> {
        let d = self.model.input_width();
        vs.iter().try_for_each(|v| check_width(d, v))?;
        let x = rows_to_matrix(vs, d)?;
        let out = self.model.predict(x.view())?;
        Ok(out.index_axis(Axis(1), 0).iter().map(|o| o.max(0.0)).collect())
    }
}
