//! Closed-form velocity fields used as oracles for solver error orders.

use serde::{Deserialize, Serialize};

use super::{FieldKind, VelocityField};
use crate::{Error, Result, TensorBuffer};

/// A scalar function of time with known derivative and antiderivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    /// `Σ cₖ tᵏ`, coefficients in ascending order.
    Polynomial(Vec<f64>),
    /// `amplitude · cos(frequency · t)`.
    Cosine { amplitude: f64, frequency: f64 },
    /// `amplitude · exp(rate · t)`.
    Exponential { amplitude: f64, rate: f64 },
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

fn poly_antiderivative(coeffs: &[f64]) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(coeffs.iter().enumerate().map(|(k, c)| c / (k as f64 + 1.0)))
        .collect()
}

impl TimeProfile {
    pub fn cos() -> Self {
        TimeProfile::Cosine {
            amplitude: 1.0,
            frequency: 1.0,
        }
    }

    pub fn exp() -> Self {
        TimeProfile::Exponential {
            amplitude: 1.0,
            rate: 1.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Polynomial(c) => horner(c, t),
            TimeProfile::Cosine { amplitude, frequency } => amplitude * (frequency * t).cos(),
            TimeProfile::Exponential { amplitude, rate } => amplitude * (rate * t).exp(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Polynomial(c) => horner(&poly_derivative(c), t),
            TimeProfile::Cosine { amplitude, frequency } => {
                -amplitude * frequency * (frequency * t).sin()
            }
            TimeProfile::Exponential { amplitude, rate } => amplitude * rate * (rate * t).exp(),
        }
    }

    /// An antiderivative `F` with `F' = value`.
    pub fn antiderivative(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Polynomial(c) => horner(&poly_antiderivative(c), t),
            TimeProfile::Cosine { amplitude, frequency } => {
                if *frequency == 0.0 {
                    amplitude * t
                } else {
                    amplitude * (frequency * t).sin() / frequency
                }
            }
            TimeProfile::Exponential { amplitude, rate } => {
                if *rate == 0.0 {
                    amplitude * t
                } else {
                    amplitude * (rate * t).exp() / rate
                }
            }
        }
    }
}

/// Analytic velocity fields with closed-form trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticField {
    /// `vᵢ(x, t) = profile(t)` in every dimension.
    TimeOnly { dim: usize, profile: TimeProfile },
    /// `vᵢ(x, t) = rates[i]·xᵢ + p(t)` with `p` a polynomial shared by all
    /// dimensions (coefficients ascending).
    LinearState { rates: Vec<f64>, forcing: Vec<f64> },
}

impl AnalyticField {
    pub fn time_only(dim: usize, profile: TimeProfile) -> Self {
        AnalyticField::TimeOnly { dim, profile }
    }

    pub fn linear_state(rates: Vec<f64>, forcing: Vec<f64>) -> Self {
        AnalyticField::LinearState { rates, forcing }
    }

    pub fn is_state_independent(&self) -> bool {
        match self {
            AnalyticField::TimeOnly { .. } => true,
            AnalyticField::LinearState { rates, .. } => rates.iter().all(|&a| a == 0.0),
        }
    }

    /// Lipschitz constant of the field in `x` (max-norm over dimensions).
    pub fn lipschitz(&self) -> f64 {
        match self {
            AnalyticField::TimeOnly { .. } => 0.0,
            AnalyticField::LinearState { rates, .. } => {
                rates.iter().fold(0.0, |m, a| m.max(a.abs()))
            }
        }
    }

    /// Velocity of a single state.
    pub fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            AnalyticField::TimeOnly { dim, profile } => vec![profile.value(t); *dim],
            AnalyticField::LinearState { rates, forcing } => {
                let p = horner(forcing, t);
                rates.iter().zip(x).map(|(a, xi)| a * xi + p).collect()
            }
        }
    }

    /// Partial time derivative `∂v/∂t` at fixed state.
    pub fn time_derivative(&self, _x: &[f64], t: f64) -> Vec<f64> {
        match self {
            AnalyticField::TimeOnly { dim, profile } => vec![profile.derivative(t); *dim],
            AnalyticField::LinearState { rates, forcing } => {
                vec![horner(&poly_derivative(forcing), t); rates.len()]
            }
        }
    }

    /// Exact state at `t_end` of the trajectory through `x1` at `t = 1`.
    pub fn solution(&self, x1: &[f64], t_end: f64) -> Vec<f64> {
        match self {
            AnalyticField::TimeOnly { profile, .. } => {
                let shift = profile.antiderivative(1.0) - profile.antiderivative(t_end);
                x1.iter().map(|x| x - shift).collect()
            }
            AnalyticField::LinearState { rates, forcing } => rates
                .iter()
                .zip(x1)
                .map(|(&a, &x)| linear_solution(a, forcing, x, t_end))
                .collect(),
        }
    }
}

/// Solves `x' = a·x + p(t)` backwards from `x(1) = x1`.
///
/// For `a ≠ 0` the polynomial particular solution is
/// `q(t) = −Σₖ p⁽ᵏ⁾(t) / a^(k+1)`, giving `x(t) = q(t) + (x1 − q(1))·e^{a(t−1)}`.
fn linear_solution(a: f64, forcing: &[f64], x1: f64, t: f64) -> f64 {
    if a == 0.0 {
        let anti = poly_antiderivative(forcing);
        return x1 - (horner(&anti, 1.0) - horner(&anti, t));
    }
    let particular = |s: f64| {
        let mut deriv = forcing.to_vec();
        let mut total = 0.0;
        let mut power = a;
        while !deriv.is_empty() {
            total -= horner(&deriv, s) / power;
            deriv = poly_derivative(&deriv);
            power *= a;
        }
        total
    };
    particular(t) + (x1 - particular(1.0)) * (a * (t - 1.0)).exp()
}

impl VelocityField for AnalyticField {
    fn dim(&self) -> usize {
        match self {
            AnalyticField::TimeOnly { dim, .. } => *dim,
            AnalyticField::LinearState { rates, .. } => rates.len(),
        }
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Analytic
    }

    fn evaluate(&self, states: &TensorBuffer, times: &[f64]) -> Result<TensorBuffer> {
        let d = self.dim();
        if states.cols() != d || states.rows() != times.len() {
            return Err(Error::Shape(format!(
                "analytic field of dim {d} got states {:?} with {} times",
                states.shape(),
                times.len()
            )));
        }
        let mut out = Vec::with_capacity(states.len());
        for (x, &t) in states.iter_rows().zip(times) {
            out.extend(self.velocity(x, t));
        }
        Ok(TensorBuffer::from_rows(d, out))
    }

    fn as_analytic(&self) -> Option<&AnalyticField> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Richardson-extrapolated explicit Euler from t = 1 down to `t_end`:
    /// `2·E(2n) − E(n)` cancels the first-order error term.
    fn euler_oracle(field: &AnalyticField, x1: &[f64], t_end: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let run = |n: usize| {
            let h = (1.0 - t_end) / n as f64;
            let mut x = x1.to_vec();
            for i in 0..n {
                let t = 1.0 - i as f64 * h;
                let v = field.velocity(&x, t);
                x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi -= h * vi);
            }
            x
        };
        let coarse = run(steps / 2);
        let fine = run(steps);
        let extrapolated = fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect();
        (fine, extrapolated)
    }

    /// Relative error, measured against 1 for components smaller than 1.
    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn cosine_example() {
        let f = AnalyticField::time_only(1, TimeProfile::cos());
        let x0 = f.solution(&[0.0], 0.0);
        assert!((x0[0] + 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_field_leaves_state() {
        let f = AnalyticField::time_only(2, TimeProfile::Polynomial(vec![0.0]));
        assert_eq!(f.solution(&[1.5, -2.0], 0.0), vec![1.5, -2.0]);
    }

    #[test]
    fn linear_state_unit_rate() {
        let f = AnalyticField::linear_state(vec![1.0], vec![0.0]);
        for &t in &[0.0, 0.3, 0.9] {
            let x = f.solution(&[2.0], t)[0];
            assert!((x - 2.0 * (-(1.0 - t)).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_solutions_match_euler_oracle() {
        let fields = [
            AnalyticField::time_only(2, TimeProfile::cos()),
            AnalyticField::time_only(1, TimeProfile::exp()),
            AnalyticField::time_only(1, TimeProfile::Polynomial(vec![0.3, -1.0, 0.5, 2.0, -0.7, 1.1])),
            AnalyticField::linear_state(vec![1.0], vec![0.0]),
            AnalyticField::linear_state(vec![-0.8, 1.3], vec![0.5, -1.0, 0.25]),
            AnalyticField::linear_state(vec![0.0, 2.0], vec![1.0, 1.0]),
        ];
        let x1 = [0.7, -1.2];
        for f in &fields {
            let x1 = &x1[..f.dim()];
            let exact = f.solution(x1, 0.0);
            let (plain, extrapolated) = euler_oracle(f, x1, 0.0, 1_000_000);
            // First-order Euler at 10^6 steps only reaches ~1e-6; the
            // extrapolated value removes the O(h) term.
            assert!(rel_err(&plain, &exact) < 5e-6, "{f:?}");
            assert!(rel_err(&extrapolated, &exact) < 1e-8, "{f:?}");
        }
    }

    #[test]
    fn profile_derivatives_are_consistent() {
        let profiles = [
            TimeProfile::cos(),
            TimeProfile::exp(),
            TimeProfile::Polynomial(vec![1.0, -2.0, 3.0, 0.5]),
            TimeProfile::Cosine { amplitude: 2.0, frequency: 3.0 },
        ];
        let h = 1e-5;
        for p in &profiles {
            for &t in &[0.1, 0.5, 0.93] {
                let d_fd = (p.value(t + h) - p.value(t - h)) / (2.0 * h);
                assert!((d_fd - p.derivative(t)).abs() < 1e-8);
                let a_fd = (p.antiderivative(t + h) - p.antiderivative(t - h)) / (2.0 * h);
                assert!((a_fd - p.value(t)).abs() < 1e-8);
            }
        }
    }
}
