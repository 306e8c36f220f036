use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FieldKind, VelocityField};
use crate::datasets::{self, DatasetKind};
use crate::nnet::{grad_mse, push_sinusoidal, AdamState, FeatureConfig, MlpModel, ModelRole};
use crate::rng::{self, stream, ChaCha8Rng};
use crate::{Error, Result, TensorBuffer};

/// A velocity field backed by an MLP over `[x, sinusoidal(t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedField {
    model: MlpModel,
}

impl LearnedField {
    pub fn new(model: MlpModel) -> Result<Self> {
        let f = model.features();
        if f.role != ModelRole::Backbone || model.output_dim() != f.state_dim {
            return Err(Error::InvalidArgument(format!(
                "a backbone needs a `backbone` feature config with output width {}, got {:?} / {}",
                f.state_dim,
                f.role,
                model.output_dim()
            )));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }

    fn inputs(&self, states: &TensorBuffer, times: &[f64]) -> TensorBuffer {
        let f = self.model.features();
        let mut data = Vec::with_capacity(states.rows() * self.model.input_dim());
        for (x, &t) in states.iter_rows().zip(times) {
            data.extend_from_slice(x);
            push_sinusoidal(&mut data, t, f.n_freq);
        }
        TensorBuffer::from_rows(self.model.input_dim(), data)
    }
}

impl VelocityField for LearnedField {
    fn dim(&self) -> usize {
        self.model.features().state_dim
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Learned
    }

    fn evaluate(&self, states: &TensorBuffer, times: &[f64]) -> Result<TensorBuffer> {
        if states.cols() != self.dim() || states.rows() != times.len() {
            return Err(Error::Shape(format!(
                "backbone of dim {} got states {:?} with {} times",
                self.dim(),
                states.shape(),
                times.len()
            )));
        }
        self.model.forward(&self.inputs(states, times))
    }
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Dataset(DatasetKind),
    /// Every sample equals the given point.
    PointMass(Vec<f64>),
}

/// Data distribution at `t = 0`; the `t = 1` marginal is always `N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProblem {
    pub source: DataSource,
}

impl FlowProblem {
    pub fn dataset(kind: DatasetKind) -> Self {
        Self {
            source: DataSource::Dataset(kind),
        }
    }

    pub fn point_mass(point: Vec<f64>) -> Self {
        Self {
            source: DataSource::PointMass(point),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            DataSource::Dataset(kind) => kind.dim(),
            DataSource::PointMass(p) => p.len(),
        }
    }

    pub fn sample_data(&self, n: usize, rng: &mut ChaCha8Rng) -> TensorBuffer {
        match &self.source {
            DataSource::Dataset(kind) => datasets::draw(*kind, n, rng),
            DataSource::PointMass(p) => TensorBuffer::from_rows(p.len(), p.repeat(n)),
        }
    }

    pub fn sample_noise(&self, n: usize, rng: &mut ChaCha8Rng) -> TensorBuffer {
        TensorBuffer::from_rows(self.dim(), rng::standard_normal(rng, n * self.dim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    #[serde(default = "BackboneConfig::default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "BackboneConfig::default_n_freq")]
    pub n_freq: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl BackboneConfig {
    fn default_hidden() -> Vec<usize> {
        vec![64, 64, 64]
    }

    fn default_n_freq() -> usize {
        4
    }

    pub fn new(iterations: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            hidden: Self::default_hidden(),
            n_freq: Self::default_n_freq(),
            iterations,
            batch_size,
            lr,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneTraining {
    pub field: LearnedField,
    /// Minibatch loss per iteration.
    pub losses: Vec<f64>,
}

/// Flow-matching regression: minimize `‖v(x_t, t) − (x_noise − x_data)‖²`
/// over `t ~ U[0, 1]` with Adam.
pub fn train_backbone(problem: &FlowProblem, config: &BackboneConfig) -> Result<BackboneTraining> {
    let d = problem.dim();
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let features = FeatureConfig::backbone(d, config.n_freq);
    let mut dims = vec![features.input_dim()];
    dims.extend(&config.hidden);
    dims.push(d);
    let mut model = MlpModel::new(&dims, config.seed)?.with_features(features)?;
    let mut adam = AdamState::new(&model, config.lr);
    let mut rng = rng::seeded(config.seed, stream::DATA);
    let mut losses = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let b = config.batch_size;
        let data = problem.sample_data(b, &mut rng);
        let noise = problem.sample_noise(b, &mut rng);
        let times: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let mut inputs = Vec::with_capacity(b * features.input_dim());
        let mut targets = Vec::with_capacity(b * d);
        for ((xd, xn), &t) in data.iter_rows().zip(noise.iter_rows()).zip(&times) {
            for (a, z) in xd.iter().zip(xn) {
                inputs.push((1.0 - t) * a + t * z);
            }
            push_sinusoidal(&mut inputs, t, config.n_freq);
            targets.extend(xn.iter().zip(xd).map(|(z, a)| z - a));
        }
        let (loss, grads) = grad_mse(
            &model,
            &TensorBuffer::from_rows(features.input_dim(), inputs),
            &TensorBuffer::from_rows(d, targets),
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "backbone loss became {loss} at iteration {it}"
            )));
        }
        adam.step(&mut model, &grads)?;
        losses.push(loss);
    }
    Ok(BackboneTraining {
        field: LearnedField::new(model)?,
        losses,
    })
}
