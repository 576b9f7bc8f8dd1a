use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_width, NoveltyScore, NoveltyScorer};
use crate::coverage::CoverageRecord;
use crate::encoding::TestVector;
use crate::error::{Error, Result};
use crate::nn::{layers_from_widths, rows_to_matrix, Activation, MlpModel, TrainConfig};

/// Hidden-neuron density scorer.
///
/// The network is trained to predict, per sampled coverage event, whether a
/// test hits it. Every hidden neuron then acts as a detector: a test's score
/// sums, over all hidden neurons, the distances from its activation to the
/// `k` nearest activations of the simulated tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityScorer {
    pub model: MlpModel,
    /// Per hidden neuron, its activations over the simulated set, ascending.
    pub caches: Vec<Vec<f64>>,
    pub k: usize,
    pub sampled_events: Vec<usize>,
    pub loss: f64,
}

/// Sum of absolute distances from `x` to its `k` nearest values in `sorted`.
///
/// Uses every value when fewer than `k` exist. Equal distances prefer the
/// lower index.
pub fn knn_distance_sum(sorted: &[f64], x: f64, k: usize) -> f64 {
    let k = k.min(sorted.len());
    let split = sorted.partition_point(|&v| v < x);
    let (mut left, mut right) = (split, split);
    let mut sum = 0.0;
    for _ in 0..k {
        let dl = if left > 0 { Some(x - sorted[left - 1]) } else { None };
        let dr = if right < sorted.len() {
            Some(sorted[right] - x)
        } else {
            None
        };
        match (dl, dr) {
            (Some(l), Some(r)) if l <= r => {
                sum += l;
                left -= 1;
            }
            (Some(l), None) => {
                sum += l;
                left -= 1;
            }
            (_, Some(r)) => {
                sum += r;
                right += 1;
            }
            (None, None) => break,
        }
    }
    sum
}

impl DensityScorer {
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        simulated: &[TestVector],
        coverage: &[CoverageRecord],
        sampled_events: &[usize],
        widths: &[usize],
        hidden: Activation,
        cfg: &TrainConfig,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = simulated.first().ok_or(Error::Empty("simulated set"))?.width();
        if k == 0 {
            return Err(Error::InvalidConfig("density k must be >= 1".into()));
        }
        if coverage.len() != simulated.len() {
            return Err(Error::dims("coverage records", simulated.len(), coverage.len()));
        }
        if widths.len() < 3 {
            return Err(Error::InvalidConfig(
                "density scorer needs at least one hidden layer".into(),
            ));
        }
        if widths.first() != Some(&d) || widths.last() != Some(&sampled_events.len()) {
            return Err(Error::InvalidConfig(format!(
                "density widths {widths:?} must map input width {d} to {} sampled events",
                sampled_events.len()
            )));
        }
        for (v, c) in simulated.iter().zip(coverage) {
            if v.test_id != c.test_id {
                return Err(Error::Integrity(format!(
                    "coverage for test {} is paired with vector {}",
                    c.test_id, v.test_id
                )));
            }
            if let Some(&e) = sampled_events.iter().find(|&&e| e >= c.num_events()) {
                return Err(Error::InvalidConfig(format!("sampled event {e} is out of range")));
            }
        }

        let x = rows_to_matrix(simulated, d)?;
        let mut targets = Array2::zeros((simulated.len(), sampled_events.len()));
        for (i, c) in coverage.iter().enumerate() {
            for (j, &e) in sampled_events.iter().enumerate() {
                targets[[i, j]] = if c.is_hit(e) { 1.0 } else { 0.0 };
            }
        }
        let mut model = MlpModel::init(layers_from_widths(widths, hidden, Activation::Sigmoid), seed)?;
        let loss = model.train(x.view(), targets.view(), cfg)?;

        let mut acts = model.activations(x.view())?;
        acts.pop();
        let caches = acts
            .iter()
            .flat_map(|layer| layer.axis_iter(Axis(1)))
            .map(|column| {
                let mut values = column.to_vec();
                values.sort_by(f64::total_cmp);
                values
            })
            .collect();
        Ok(DensityScorer {
            model,
            caches,
            k,
            sampled_events: sampled_events.to_vec(),
            loss,
        })
    }

    pub fn num_detectors(&self) -> usize {
        self.caches.len()
    }

    /// Score of one test given its hidden activations, flattened in neuron order.
    pub fn score_activations(&self, hidden: impl IntoIterator<Item = f64>) -> NoveltyScore {
        self.caches
            .iter()
            .zip(hidden)
            .map(|(cache, a)| knn_distance_sum(cache, a, self.k))
            .sum()
    }
}

impl NoveltyScorer for DensityScorer {
    fn score(&self, v: &TestVector) -> Result<NoveltyScore> {
        check_width(self.model.input_width(), v)?;
        let pass = self.model.forward(&v.values)?;
        Ok(self.score_activations(pass.hidden.into_iter().flatten()))
    }

    fn training_loss(&self) -> f64 {
        self.loss
    }

    fn score_chunk(&self, vs: &[TestVector]) -> Result<Vec<NoveltyScore>> {
        let d = self.model.input_width();
        vs.iter().try_for_each(|v| check_width(d, v))?;
        let x = rows_to_matrix(vs, d)?;
        let mut acts = self.model.activations(x.view())?;
        acts.pop();
        Ok((0..vs.len())
            .map(|row| {
                let hidden = acts.iter().flat_map(|layer| layer.row(row).to_vec());
                self.score_activations(hidden)
            })
            .collect())
    }
}
