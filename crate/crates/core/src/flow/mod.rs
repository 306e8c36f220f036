//! Velocity fields, evaluation accounting and flow-matching construction.
//!
//! Time runs from `t = 1` (standard normal noise) to `t = 0` (data) along the
//! straight path `x_t = (1 − t)·x_data + t·x_noise`, whose velocity
//! `x_noise − x_data` is the regression target for the backbone.

mod analytic;
mod learned;

use std::cell::Cell;

pub use analytic::{AnalyticField, TimeProfile};
pub use learned::{train_backbone, BackboneConfig, BackboneTraining, DataSource, FlowProblem, LearnedField};

use crate::{Error, Result, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Analytic,
    Learned,
}

/// A time-dependent vector field `v(x, t)` evaluated on batches of states.
///
/// One call to [`VelocityField::evaluate`] is one function evaluation (NFE)
/// regardless of how many rows it carries; rows stand for independent samples
/// advanced in lockstep.
pub trait VelocityField {
    fn dim(&self) -> usize;

    fn kind(&self) -> FieldKind;

    /// Velocity of each row of `states` at the matching entry of `times`.
    fn evaluate(&self, states: &TensorBuffer, times: &[f64]) -> Result<TensorBuffer>;

    fn as_analytic(&self) -> Option<&AnalyticField> {
        None
    }

    /// Evaluates every row at the same time `t`.
    fn evaluate_at(&self, states: &TensorBuffer, t: f64) -> Result<TensorBuffer> {
        self.evaluate(states, &vec![t; states.rows()])
    }
}

/// Wraps a field with an evaluation counter.
///
/// Each sampling or training run owns its own `Metered` wrapper, so counts are
/// never shared across runs.
pub struct Metered<'a, F: VelocityField + ?Sized> {
    inner: &'a F,
    nfe: Cell<usize>,
}

impl<'a, F: VelocityField + ?Sized> Metered<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            nfe: Cell::new(0),
        }
    }

    pub fn nfe(&self) -> usize {
        self.nfe.get()
    }

    pub fn inner(&self) -> &'a F {
        self.inner
    }
}

impl<F: VelocityField + ?Sized> VelocityField for Metered<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> FieldKind {
        self.inner.kind()
    }

    fn evaluate(&self, states: &TensorBuffer, times: &[f64]) -> Result<TensorBuffer> {
        self.nfe.set(self.nfe.get() + 1);
        self.inner.evaluate(states, times)
    }

    fn as_analytic(&self) -> Option<&AnalyticField> {
        self.inner.as_analytic()
    }
}

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − t)·x_data + t·x_noise`.
pub fn linear_interpolant(x_data: &[f64], x_noise: &[f64], t: f64) -> Result<Vec<f64>> {
    check_unit_time(t)?;
    if x_data.len() != x_noise.len() {
        return Err(Error::Shape(format!(
            "data has {} dims, noise has {}",
            x_data.len(),
            x_noise.len()
        )));
    }
    Ok(x_data
        .iter()
        .zip(x_noise)
        .map(|(d, n)| (1.0 - t) * d + t * n)
        .collect())
}

/// Velocity of the straight path: `x_noise − x_data`.
pub fn fm_target(x_data: &[f64], x_noise: &[f64]) -> Result<Vec<f64>> {
    if x_data.len() != x_noise.len() {
        return Err(Error::Shape(format!(
            "data has {} dims, noise has {}",
            x_data.len(),
            x_noise.len()
        )));
    }
    Ok(x_noise.iter().zip(x_data).map(|(n, d)| n - d).collect())
}

/// Closed-form state at `t_end` of the trajectories starting from each row of
/// `x1` at `t = 1`. Only analytic fields have one.
pub fn exact_solution(
    field: &dyn VelocityField,
    x1: &TensorBuffer,
    t_end: f64,
) -> Result<TensorBuffer> {
    let analytic = field.as_analytic().ok_or_else(|| {
        Error::InvalidArgument("exact solutions exist only for analytic fields".into())
    })?;
    check_unit_time(t_end)?;
    if x1.cols() != field.dim() {
        return Err(Error::Shape(format!(
            "field has dim {}, states have {} columns",
            field.dim(),
            x1.cols()
        )));
    }
    let mut out = Vec::with_capacity(x1.len());
    for row in x1.iter_rows() {
        out.extend(analytic.solution(row, t_end));
    }
    Ok(TensorBuffer::from_rows(x1.cols(), out))
}
