use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{check_width, NoveltyScore, NoveltyScorer};
use crate::encoding::TestVector;
use crate::error::{Error, Result};
use crate::nn::{layers_from_widths, rows_to_matrix, Activation, MlpModel, TrainConfig};

/// Reconstruction-error scorer: one detector per reconstructed feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoencoderScorer {
    pub model: MlpModel,
    pub loss: f64,
}

/// Mean squared difference between `input` and its reconstruction.
pub fn autoencoder_score(model: &MlpModel, input: &[f64]) -> Result<NoveltyScore> {
    if model.output_width() != model.input_width() {
        return Err(Error::InvalidConfig(format!(
            "autoencoder output width {} differs from input width {}",
            model.output_width(),
            model.input_width()
        )));
    }
    let out = model.forward(input)?.output;
    Ok(reconstruction_error(input, &out))
}

fn reconstruction_error(input: &[f64], output: &[f64]) -> f64 {
    let n = input.len() as f64;
    input.iter().zip(output).map(|(i, o)| (i - o) * (i - o)).sum::<f64>() / n
}

impl AutoencoderScorer {
    pub fn train(
        simulated: &[TestVector],
        widths: &[usize],
        hidden: Activation,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let d = simulated.first().ok_or(Error::Empty("simulated set"))?.width();
        if widths.first() != Some(&d) || widths.last() != Some(&d) {
            return Err(Error::InvalidConfig(format!(
                "autoencoder widths {widths:?} must start and end at the input width {d}"
            )));
        }
        let x = rows_to_matrix(simulated, d)?;
        let mut model = MlpModel::init(layers_from_widths(widths, hidden, Activation::Identity), seed)?;
        let loss = model.train(x.view(), x.view(), cfg)?;
        Ok(AutoencoderScorer { model, loss })
    }
}

impl NoveltyScorer for AutoencoderScorer {
    fn score(&self, v: &TestVector) -> Result<NoveltyScore> {
        autoencoder_score(&self.model, &v.values)
    }

    fn training_loss(&self) -> f64 {
        self.loss
    }

    fn score_chunk(&self, vs: &[TestVector]) -> Result<Vec<NoveltyScore>> {
        let d = self.model.input_width();
        vs.iter().try_for_each(|v| check_width(d, v))?;
        let x = rows_to_matrix(vs, d)?;
        let out = self.model.predict(x.view())?;
        Ok(x.axis_iter(Axis(0))
            .zip(out.axis_iter(Axis(0)))
            .map(|(i, o)| reconstruction_error(i.as_slice().unwrap(), o.as_slice().unwrap()))
            .collect())
    }
}
