//! The SideNet: a small network predicting how the backbone velocity changes
//! over a time offset.
//!
//! Given a state `x`, its backbone velocity `v` at time `t` and an offset `Δt`
//! (negative looks ahead toward data, positive looks back toward noise), the
//! velocity at `t + Δt` is estimated as
//!
//! ```text
//! v̂(t + Δt) = v + Δt · S(x, v, t, Δt)
//! ```
//!
//! so a zero offset returns `v` unchanged whatever the parameters are.

mod chain;

pub use chain::{
    chain_train_step, sample_interval, train_sidenet, truncated_exp_inverse_cdf, ChainBatch,
    ChainStep, ChainTrainConfig, MatchingSet, SidenetTraining,
};

use std::cell::Cell;

use crate::nnet::{push_sinusoidal, FeatureConfig, MlpModel, ModelRole};
use crate::{Error, Result, TensorBuffer};

/// A batch of `(x, v, t, Δt)` queries for a deviation model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationQueries {
    dim: usize,
    pub states: Vec<f64>,
    pub velocities: Vec<f64>,
    pub times: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl DeviationQueries {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            states: Vec::new(),
            velocities: Vec::new(),
            times: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            states: Vec::with_capacity(n * dim),
            velocities: Vec::with_capacity(n * dim),
            times: Vec::with_capacity(n),
            offsets: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, x: &[f64], v: &[f64], t: f64, offset: f64) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(v.len(), self.dim);
        self.states.extend_from_slice(x);
        self.velocities.extend_from_slice(v);
        self.times.push(t);
        self.offsets.push(offset);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }
}

/// Anything that predicts first-order velocity deviations `S(x, v, t, Δt)`.
///
/// Implemented by the trained [`SideNetModel`] and by the analytic oracles in
/// [`crate::analysis`].
pub trait DeviationModel {
    fn dim(&self) -> usize;

    /// `S` for every query, one row each.
    fn deviation(&self, queries: &DeviationQueries) -> Result<TensorBuffer>;
}

/// `v + Δt·S` for every query, computed in a single batched call.
pub fn predict_velocities<M: DeviationModel + ?Sized>(
    model: &M,
    queries: &DeviationQueries,
) -> Result<TensorBuffer> {
    if queries.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "deviation model has dim {}, queries have {}",
            model.dim(),
            queries.dim()
        )));
    }
    let mut s = model.deviation(queries)?;
    let d = queries.dim();
    for (i, row) in s.data_mut().chunks_exact_mut(d).enumerate() {
        let dt = queries.offsets[i];
        for (out, v) in row.iter_mut().zip(queries.velocity(i)) {
            *out = v + dt * *out;
        }
    }
    Ok(s)
}

/// Velocities at `t + Δt` for each offset, from a single state and its velocity.
pub fn sidenet_predict<M: DeviationModel + ?Sized>(
    model: &M,
    x: &[f64],
    v: &[f64],
    t: f64,
    offsets: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    if let Some(dt) = offsets
        .iter()
        .find(|&&dt| !(-1e-12..=1.0 + 1e-12).contains(&(t + dt)))
    {
        return Err(Error::InvalidArgument(format!(
            "offset {dt} from t = {t} leaves [0, 1]"
        )));
    }
    if x.len() != model.dim() || v.len() != model.dim() {
        return Err(Error::Shape(format!(
            "expected state and velocity of dim {}",
            model.dim()
        )));
    }
    let mut q = DeviationQueries::with_capacity(model.dim(), offsets.len());
    for &dt in offsets {
        q.push(x, v, t, dt);
    }
    Ok(predict_velocities(model, &q)?.to_rows())
}

/// MLP deviation model over `[x, v, sinusoidal(t), sinusoidal(Δt), Δt]`.
#[derive(Debug, Clone)]
pub struct SideNetModel {
    mlp: MlpModel,
    calls: Cell<usize>,
}

impl PartialEq for SideNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp
    }
}

impl SideNetModel {
    /// Random hidden layers and a zeroed output layer, so the untrained model
    /// predicts no deviation at all.
    pub fn new(state_dim: usize, hidden: &[usize], n_freq: usize, seed: u64) -> Result<Self> {
        let mut mlp = MlpModel::new(&Self::dims(state_dim, hidden, n_freq), seed)?
            .with_features(FeatureConfig::sidenet(state_dim, n_freq))?;
        mlp.zero_output_layer();
        Self::from_model(mlp)
    }

    /// Every parameter zero.
    pub fn zeros(state_dim: usize, hidden: &[usize], n_freq: usize) -> Result<Self> {
        let mlp = MlpModel::zeros(&Self::dims(state_dim, hidden, n_freq))?
            .with_features(FeatureConfig::sidenet(state_dim, n_freq))?;
        Self::from_model(mlp)
    }

    fn dims(state_dim: usize, hidden: &[usize], n_freq: usize) -> Vec<usize> {
        let mut dims = vec![FeatureConfig::sidenet(state_dim, n_freq).input_dim()];
        dims.extend(hidden);
        dims.push(state_dim);
        dims
    }

    pub fn from_model(mlp: MlpModel) -> Result<Self> {
        let f = mlp.features();
        if f.role != ModelRole::Sidenet || mlp.output_dim() != f.state_dim {
            return Err(Error::InvalidArgument(format!(
                "a SideNet needs a `sidenet` feature config with output width {}, got {:?} / {}",
                f.state_dim,
                f.role,
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp,
            calls: Cell::new(0),
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.mlp
    }

    pub fn model_mut(&mut self) -> &mut MlpModel {
        &mut self.mlp
    }

    pub fn into_model(self) -> MlpModel {
        self.mlp
    }

    /// Number of batched forward calls made so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub(crate) fn inputs(&self, q: &DeviationQueries) -> TensorBuffer {
        let n_freq = self.mlp.features().n_freq;
        let mut data = Vec::with_capacity(q.len() * self.mlp.input_dim());
        for i in 0..q.len() {
            data.extend_from_slice(q.state(i));
            data.extend_from_slice(q.velocity(i));
            push_sinusoidal(&mut data, q.times[i], n_freq);
            push_sinusoidal(&mut data, q.offsets[i], n_freq);
            data.push(q.offsets[i]);
        }
        TensorBuffer::from_rows(self.mlp.input_dim(), data)
    }
}

impl DeviationModel for SideNetModel {
    fn dim(&self) -> usize {
        self.mlp.features().state_dim
    }

    fn deviation(&self, queries: &DeviationQueries) -> Result<TensorBuffer> {
        self.calls.set(self.calls.get() + 1);
        if queries.is_empty() {
            return Ok(TensorBuffer::from_rows(self.dim(), Vec::new()));
        }
        self.mlp.forward(&self.inputs(queries))
    }
}
