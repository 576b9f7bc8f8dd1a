//! A small dense feed-forward network.
//!
//! Weights are stored as `fan_in x fan_out` matrices so a batch of row
//! vectors propagates as `Z = X W + b`. Hidden activations are exposed
//! because the density scorer treats every hidden neuron as a detector.

mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

pub use train::{Gradients, Loss, Optimizer, TrainConfig};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`, given `a = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(Error::InvalidConfig(format!(
                "leaky relu slope {slope} is outside (0, 1)"
            ))),
            _ => Ok(()),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        LayerSpec { width, activation }
    }

    pub fn input(width: usize) -> Self {
        LayerSpec::new(width, Activation::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidConfig("layer width must be >= 1".into()));
        }
        self.activation.validate()
    }
}

/// Builds layer specs from a width vector: identity input, `hidden` activation
/// on every interior layer, `output` on the last.
pub fn layers_from_widths(widths: &[usize], hidden: Activation, output: Activation) -> Vec<LayerSpec> {
    let last = widths.len().saturating_sub(1);
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| match i {
            0 => LayerSpec::input(w),
            i if i == last => LayerSpec::new(w, output),
            _ => LayerSpec::new(w, hidden),
        })
        .collect()
}

/// Output of a single-vector forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub output: Vec<f64>,
    /// Post-activation values, one vector per hidden layer.
    pub hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct MlpModel {
    layers: Vec<LayerSpec>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    rng_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    layers: Vec<LayerSpec>,
    rng_seed: u64,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl TryFrom<ModelRepr> for MlpModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        MlpModel::from_parts(r.layers, r.weights, r.biases, r.rng_seed)
    }
}

impl From<MlpModel> for ModelRepr {
    fn from(m: MlpModel) -> Self {
        ModelRepr {
            layers: m.layers,
            rng_seed: m.rng_seed,
            weights: m.weights,
            biases: m.biases,
        }
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let mut rng = rng_from(derive_seed(seed, "nn-init", 0));
        let mut weights = Vec::with_capacity(layers.len() - 1);
        let mut biases = Vec::with_capacity(layers.len() - 1);
        for pair in layers.windows(2) {
            let (fan_in, fan_out) = (pair[0].width, pair[1].width);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
                dist.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            layers,
            weights,
            biases,
            rng_seed: seed,
        })
    }

    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        rng_seed: u64,
    ) -> Result<Self> {
        validate_layers(&layers)?;
        let n = layers.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::dims("parameter count", n, weights.len().min(biases.len())));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let shape = weights[i].dim();
            if shape != (pair[0].width, pair[1].width) {
                return Err(Error::InvalidConfig(format!(
                    "weight matrix {i} has shape {shape:?}, expected ({}, {})",
                    pair[0].width, pair[1].width
                )));
            }
            if biases[i].len() != pair[1].width {
                return Err(Error::dims("bias vector", pair[1].width, biases[i].len()));
            }
        }
        let model = MlpModel {
            layers,
            weights,
            biases,
            rng_seed,
        };
        if !model.is_finite() {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.width).collect()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].width
    }

    /// Total number of hidden neurons (input and output layers excluded).
    pub fn hidden_neurons(&self) -> usize {
        self.layers[1..self.layers.len() - 1].iter().map(|l| l.width).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        self.check_input(input.len())?;
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("forward input must be finite".into()));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector shape");
        let acts = self.propagate(x, true);
        let mut hidden: Vec<Vec<f64>> = acts.into_iter().map(|a| a.into_raw_vec_and_offset().0).collect();
        let output = hidden.pop().expect("at least one layer");
        Ok(ForwardPass { output, hidden })
    }

    /// Batch forward pass, returning only the output layer (`rows x output_width`).
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        Ok(self.propagate(inputs, false).pop().expect("at least one layer"))
    }

    /// Batch forward pass returning every hidden layer's post-activation
    /// matrix followed by the output matrix.
    pub fn activations(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(inputs.ncols())?;
        Ok(self.propagate(inputs, true))
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::dims("forward input", self.input_width(), width));
        }
        Ok(())
    }

    fn propagate(&self, inputs: ArrayView2<'_, f64>, keep_all: bool) -> Vec<Array2<f64>> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut current: Option<Array2<f64>> = None;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let act = self.layers[l + 1].activation;
            let mut z = match &current {
                None => inputs.dot(w),
                Some(a) => a.dot(w),
            };
            z += b;
            z.mapv_inplace(|v| act.apply(v));
            if keep_all {
                if let Some(prev) = current.take() {
                    out.push(prev);
                }
            }
            current = Some(z);
        }
        out.push(current.expect("at least one weight matrix"));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a model needs at least 2 layers, got {}",
            layers.len()
        )));
    }
    layers.iter().try_for_each(LayerSpec::validate)
}

/// Stacks equal-length rows into a matrix.
pub fn rows_to_matrix<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows.len(), width));
    for (mut dst, src) in m.axis_iter_mut(Axis(0)).zip(rows) {
        let src = src.as_ref();
        if src.len() != width {
            return Err(Error::dims("matrix row", width, src.len()));
        }
        dst.assign(&ndarray::aview1(src));
    }
    Ok(m)
}
