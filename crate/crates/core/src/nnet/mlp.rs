use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TensorBuffer;
use crate::rng::{self, stream};
use crate::{Error, Result};

/// `[sin(2^k·π·s), cos(2^k·π·s)]` for `k = 0..n_freq`, interleaved per frequency.
pub fn sinusoidal_features(s: f64, n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_freq);
    push_sinusoidal(&mut out, s, n_freq);
    out
}

pub(crate) fn push_sinusoidal(out: &mut Vec<f64>, s: f64, n_freq: usize) {
    let mut scale = PI;
    for _ in 0..n_freq {
        let (sin, cos) = (scale * s).sin_cos();
        out.push(sin);
        out.push(cos);
        scale *= 2.0;
    }
}

/// What a network's input vector is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Raw inputs, no feature construction.
    Plain,
    /// `[x, features(t)]`.
    Backbone,
    /// `[x, v, features(t), features(Δt), Δt]`.
    Sidenet,
}

impl ModelRole {
    pub fn tag(self) -> &'static str {
        match self {
            ModelRole::Plain => "mlp",
            ModelRole::Backbone => "backbone",
            ModelRole::Sidenet => "sidenet",
        }
    }
}

/// How scalar conditioning inputs are embedded ahead of the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub role: ModelRole,
    pub state_dim: usize,
    pub n_freq: usize,
}

impl FeatureConfig {
    pub fn plain(input_dim: usize) -> Self {
        Self {
            role: ModelRole::Plain,
            state_dim: input_dim,
            n_freq: 0,
        }
    }

    pub fn backbone(state_dim: usize, n_freq: usize) -> Self {
        Self {
            role: ModelRole::Backbone,
            state_dim,
            n_freq,
        }
    }

    pub fn sidenet(state_dim: usize, n_freq: usize) -> Self {
        Self {
            role: ModelRole::Sidenet,
            state_dim,
            n_freq,
        }
    }

    /// Width of the network input implied by this configuration.
    pub fn input_dim(&self) -> usize {
        match self.role {
            ModelRole::Plain => self.state_dim,
            ModelRole::Backbone => self.state_dim + 2 * self.n_freq,
            ModelRole::Sidenet => 2 * self.state_dim + 4 * self.n_freq + 1,
        }
    }
}

/// One affine layer; `weight` has shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: TensorBuffer,
    pub bias: TensorBuffer,
}

impl Dense {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: TensorBuffer::zeros(vec![d_out, d_in]),
            bias: TensorBuffer::zeros(vec![d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Parameter gradients, laid out exactly like [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.d_in(), l.d_out()))
                .collect(),
        }
    }

    /// Flattened view in parameter order (per layer: weights then biases).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.data());
        out.extend_from_slice(l.bias.data());
    }
    out
}

/// Dense feed-forward network: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    pub(crate) layers: Vec<Dense>,
    features: FeatureConfig,
}

/// Activations recorded by [`MlpModel::forward_trace`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<TensorBuffer>,
}

impl ForwardTrace {
    pub fn output(&self) -> &TensorBuffer {
        self.activations.last().expect("trace always holds the input")
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least an input and an output width, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer widths must be at least 1, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Glorot-uniform weights in `±sqrt(6 / (d_in + d_out))`, zero biases.
    ///
    /// Weights are drawn layer by layer in row-major order from the
    /// initialization stream of `seed`, so `(layer_dims, seed)` fixes the model
    /// bit for bit.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = rng::seeded(seed, stream::INIT);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let limit = (6.0 / (d_in + d_out) as f64).sqrt();
                let weights = (0..d_in * d_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Dense {
                    weight: TensorBuffer::from_rows(d_in, weights),
                    bias: TensorBuffer::zeros(vec![d_out]),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            features: FeatureConfig::plain(layer_dims[0]),
        })
    }

    /// A model with every parameter set to zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers: layer_dims
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
            features: FeatureConfig::plain(layer_dims[0]),
        })
    }

    pub(crate) fn from_parts(
        layer_dims: Vec<usize>,
        layers: Vec<Dense>,
        features: FeatureConfig,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        if layers.len() != layer_dims.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layer widths need {} layers, got {}",
                layer_dims.len(),
                layer_dims.len() - 1,
                layers.len()
            )));
        }
        for (i, (l, w)) in layers.iter().zip(layer_dims.windows(2)).enumerate() {
            if l.weight.shape() != [w[1], w[0]] || l.bias.shape() != [w[1]] {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} / bias {:?} do not match widths {} -> {}",
                    l.weight.shape(),
                    l.bias.shape(),
                    w[0],
                    w[1]
                )));
            }
        }
        let model = Self {
            layer_dims,
            layers,
            features,
        };
        model.check_features()?;
        Ok(model)
    }

    /// Attaches a feature configuration; its input width must match the first layer.
    pub fn with_features(mut self, features: FeatureConfig) -> Result<Self> {
        self.features = features;
        self.check_features()?;
        Ok(self)
    }

    fn check_features(&self) -> Result<()> {
        let want = self.features.input_dim();
        if want != self.layer_dims[0] {
            return Err(Error::Shape(format!(
                "feature config implies input width {want}, first layer takes {}",
                self.layer_dims[0]
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn features(&self) -> FeatureConfig {
        self.features
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// All parameters in checkpoint order (per layer: weights then biases).
    pub fn flatten_parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Mutable access to every parameter tensor, in checkpoint order.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
    }

    /// Zeros the output layer so the network starts out predicting exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    fn check_input(&self, input: &TensorBuffer) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "expected a [batch, {}] input, got {:?}",
                self.input_dim(),
                input.shape()
            )));
        }
        Ok(())
    }

    /// Batched forward pass. Rows are processed independently with a fixed
    /// summation order, so results do not depend on batch composition.
    pub fn forward(&self, input: &TensorBuffer) -> Result<TensorBuffer> {
        self.check_input(input)?;
        let mut act = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            act = affine(layer, &act, i + 1 < self.layers.len());
        }
        Ok(act)
    }

    /// Forward pass that keeps every activation for [`MlpModel::backward`].
    pub fn forward_trace(&self, input: &TensorBuffer) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = affine(layer, activations.last().unwrap(), i + 1 < self.layers.len());
            activations.push(next);
        }
        Ok(ForwardTrace { activations })
    }

    /// Reverse-mode pass: given `dL/d(output)` for every row of the traced
    /// batch, returns `dL/d(parameters)`.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &TensorBuffer) -> Result<Gradients> {
        let out = trace.output();
        if output_grad.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.shape(),
                out.shape()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let (d_in, d_out) = (layer.d_in(), layer.d_out());
            let g = &mut grads.layers[l];
            for (drow, arow) in delta.iter_rows().zip(input.iter_rows()) {
                let gw = g.weight.data_mut();
                for o in 0..d_out {
                    let d = drow[o];
                    if d == 0.0 {
                        continue;
                    }
                    let w_row = &mut gw[o * d_in..(o + 1) * d_in];
                    for (gwi, a) in w_row.iter_mut().zip(arow) {
                        *gwi += d * a;
                    }
                }
                for (gb, d) in g.bias.data_mut().iter_mut().zip(drow) {
                    *gb += d;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through W and the tanh of the layer below.
            let w = layer.weight.data();
            let mut prev = TensorBuffer::zeros(vec![delta.rows(), d_in]);
            for (r, (drow, arow)) in delta.iter_rows().zip(input.iter_rows()).enumerate() {
                let prow = prev.row_mut(r);
                for o in 0..d_out {
                    let d = drow[o];
                    for (p, wi) in prow.iter_mut().zip(&w[o * d_in..(o + 1) * d_in]) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prow.iter_mut().zip(arow) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        Ok(grads)
    }
}

fn affine(layer: &Dense, input: &TensorBuffer, squash: bool) -> TensorBuffer {
    let (d_in, d_out) = (layer.d_in(), layer.d_out());
    let w = layer.weight.data();
    let b = layer.bias.data();
    let mut out = Vec::with_capacity(input.rows() * d_out);
    for row in input.iter_rows() {
        for o in 0..d_out {
            let z = w[o * d_in..(o + 1) * d_in]
                .iter()
                .zip(row)
                .fold(b[o], |acc, (wi, x)| acc + wi * x);
            out.push(if squash { z.tanh() } else { z });
        }
    }
    TensorBuffer::from_rows(d_out, out)
}

/// Mean squared error over batch and output dimensions, with its parameter
/// gradient.
pub fn grad_mse(
    model: &MlpModel,
    inputs: &TensorBuffer,
    targets: &TensorBuffer,
) -> Result<(f64, Gradients)> {
    let trace = model.forward_trace(inputs)?;
    let out = trace.output();
    if targets.shape() != out.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match outputs {:?}",
            targets.shape(),
            out.shape()
        )));
    }
    let scale = 1.0 / out.len() as f64;
    let mut loss = 0.0;
    let residual: Vec<f64> = out
        .data()
        .iter()
        .zip(targets.data())
        .map(|(y, t)| {
            let r = y - t;
            loss += r * r;
            2.0 * r * scale
        })
        .collect();
    let grads = model.backward(&trace, &TensorBuffer::from_rows(out.cols(), residual))?;
    Ok((loss * scale, grads))
}
