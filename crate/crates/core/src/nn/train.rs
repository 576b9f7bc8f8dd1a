use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Activation, MlpModel};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// Logits are clamped to this magnitude before the cross-entropy is taken.
const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    MeanSquaredError,
    /// Requires a sigmoid output layer; computed from the pre-sigmoid logits.
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::MeanSquaredError,
            epochs: 30,
            minibatch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_loss(self, loss: Loss) -> Self {
        TrainConfig { loss, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("epochs and minibatch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Gradients of the mean per-sample loss, shaped like the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-sample loss, averaged over the output units.
fn sample_losses(loss: Loss, out: &Array2<f64>, logits: &Array2<f64>, targets: ArrayView2<'_, f64>) -> Array1<f64> {
    let n_out = out.ncols() as f64;
    match loss {
        Loss::MeanSquaredError => {
            let mut l = Array1::zeros(out.nrows());
            Zip::from(&mut l)
                .and(out.rows())
                .and(targets.rows())
                .for_each(|l, o, t| {
                    *l = o.iter().zip(t).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n_out;
                });
            l
        }
        Loss::BinaryCrossEntropy => {
            let mut l = Array1::zeros(out.nrows());
            Zip::from(&mut l)
                .and(logits.rows())
                .and(targets.rows())
                .for_each(|l, z, t| {
                    *l = z
                        .iter()
                        .zip(t)
                        .map(|(&z, &t)| {
                            let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                            // -t ln s(z) - (1-t) ln(1 - s(z)), in softplus form
                            z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
                        })
                        .sum::<f64>()
                        / n_out;
                });
            l
        }
    }
}

impl MlpModel {
    fn check_training_data(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, loss: Loss) -> Result<()> {
        if inputs.nrows() == 0 {
            return Err(Error::Empty("training set"));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::dims("target rows", inputs.nrows(), targets.nrows()));
        }
        if inputs.ncols() != self.input_width() {
            return Err(Error::dims("training input", self.input_width(), inputs.ncols()));
        }
        if targets.ncols() != self.output_width() {
            return Err(Error::dims("training target", self.output_width(), targets.ncols()));
        }
        if loss == Loss::BinaryCrossEntropy {
            if self.layers.last().map(|l| l.activation) != Some(Activation::Sigmoid) {
                return Err(Error::InvalidConfig(
                    "cross-entropy needs a sigmoid output layer".into(),
                ));
            }
            if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::InvalidConfig("cross-entropy targets must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Mean per-sample loss over `inputs`, without computing gradients.
    pub fn loss(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, loss: Loss) -> Result<f64> {
        self.check_training_data(inputs, targets, loss)?;
        let (zs, acts) = self.forward_cached(inputs);
        Ok(sample_losses(loss, acts.last().unwrap(), zs.last().unwrap(), targets)
            .mean()
            .unwrap())
    }

    /// Mean loss over the batch and its analytic gradient.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        self.check_training_data(inputs, targets, loss)?;
        let (sum, grads) = self.backprop(inputs, targets, loss);
        Ok((sum / inputs.nrows() as f64, grads))
    }

    /// Pre-activations and activations for every layer; `acts[0]` is the input.
    fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut zs = Vec::with_capacity(self.weights.len());
        let mut acts = vec![inputs.to_owned()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let act = self.layers[l + 1].activation;
            let mut z = acts[l].dot(w);
            z += b;
            acts.push(z.mapv(|v| act.apply(v)));
            zs.push(z);
        }
        (zs, acts)
    }

    /// Returns the summed per-sample loss and the gradient of the batch mean.
    fn backprop(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, loss: Loss) -> (f64, Gradients) {
        let (zs, acts) = self.forward_cached(inputs);
        let last = self.weights.len() - 1;
        let out = &acts[last + 1];
        let batch_sum = sample_losses(loss, out, &zs[last], targets).sum();

        // dL/dz of the output layer, already scaled by 1 / (batch * n_out)
        let scale = 1.0 / (inputs.nrows() * out.ncols()) as f64;
        let out_act = self.layers[last + 1].activation;
        let mut delta = match loss {
            Loss::MeanSquaredError => {
                let mut d = out - &targets;
                Zip::from(&mut d)
                    .and(&zs[last])
                    .and(out)
                    .for_each(|d, &z, &a| *d *= 2.0 * scale * out_act.derivative(z, a));
                d
            }
            Loss::BinaryCrossEntropy => {
                let mut d = zs[last].mapv(|z| sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)));
                d -= &targets;
                d *= scale;
                d
            }
        };

        let mut gw = Vec::with_capacity(self.weights.len());
        let mut gb = Vec::with_capacity(self.weights.len());
        for l in (0..=last).rev() {
            gw.push(acts[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let act = self.layers[l].activation;
                let mut prev = delta.dot(&self.weights[l].t());
                Zip::from(&mut prev)
                    .and(&zs[l - 1])
                    .and(&acts[l])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        (
            batch_sum,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }

    /// Mini-batch training. Samples are visited in a fresh seed-determined
    /// order every epoch. Returns the mean per-sample loss of the last epoch.
    pub fn train(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        cfg: &TrainConfig,
    ) -> Result<f64> {
        cfg.validate()?;
        self.check_training_data(inputs, targets, cfg.loss)?;
        let n = inputs.nrows();
        let mut rng = rng_from(derive_seed(self.rng_seed, "nn-shuffle", 0));
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = OptimizerState::new(self, cfg.optimizer);
        let mut epoch_loss = 0.0;

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.minibatch_size) {
                let x = inputs.select(Axis(0), chunk);
                let t = targets.select(Axis(0), chunk);
                let (sum, grads) = self.backprop(x.view(), t.view(), cfg.loss);
                if !sum.is_finite() {
                    return Err(Error::Diverged { epoch, loss: sum });
                }
                total += sum;
                state.step(self, &grads, cfg.learning_rate);
            }
            epoch_loss = total / n as f64;
            if !epoch_loss.is_finite() || !self.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: epoch_loss,
                });
            }
        }
        Ok(epoch_loss)
    }
}

struct OptimizerState {
    kind: Optimizer,
    step: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl OptimizerState {
    fn new(model: &MlpModel, kind: Optimizer) -> Self {
        let (m_w, v_w, m_b, v_b) = match kind {
            Optimizer::Sgd => Default::default(),
            Optimizer::Adam { .. } => {
                let zw: Vec<_> = model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
                let zb: Vec<_> = model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
                (zw.clone(), zw, zb.clone(), zb)
            }
        };
        OptimizerState {
            kind,
            step: 0,
            m_w,
            v_w,
            m_b,
            v_b,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-lr, g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-lr, g);
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                };
                for l in 0..model.weights.len() {
                    Zip::from(&mut model.weights[l])
                        .and(&mut self.m_w[l])
                        .and(&mut self.v_w[l])
                        .and(&grads.weights[l])
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut model.biases[l])
                        .and(&mut self.m_b[l])
                        .and(&mut self.v_b[l])
                        .and(&grads.biases[l])
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
    }
}
