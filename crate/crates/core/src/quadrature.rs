//! Fixed quadrature rules on the reference interval `[0, 1]`.
//!
//! A reference node `u` maps to the time `τ = t − h·u`, so nodes are visited
//! in decreasing time from the start of an interval `t` to its end `t − h`.
//! Node and weight values are closed forms; [`QuadratureRule::validate`]
//! re-derives each rule's exactness degree from monomials.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance used when deciding that a monomial is integrated exactly.
pub const EXACTNESS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Open 3-point Gauss-Legendre rule (degree 5).
    GaussLegendre3,
    /// 4-point Gauss-Lobatto rule: both endpoints plus two interior nodes (degree 5).
    GaussLobatto4,
    /// Simpson's rule: endpoints plus midpoint (degree 3).
    Simpson3,
    /// Trapezoid, the 2-point Lobatto rule: endpoints only (degree 1).
    Trapezoid,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] = [
        RuleKind::GaussLegendre3,
        RuleKind::GaussLobatto4,
        RuleKind::Simpson3,
        RuleKind::Trapezoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::GaussLegendre3 => "gauss_legendre3",
            RuleKind::GaussLobatto4 => "gauss_lobatto4",
            RuleKind::Simpson3 => "simpson3",
            RuleKind::Trapezoid => "trapezoid",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "quadrature rule",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    kind: RuleKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exactness_degree: usize,
    includes_endpoints: bool,
}

impl QuadratureRule {
    pub fn new(kind: RuleKind) -> Self {
        let (nodes, weights, exactness_degree) = match kind {
            RuleKind::GaussLegendre3 => {
                let r = (3.0f64 / 5.0).sqrt() / 2.0;
                (
                    vec![0.5 - r, 0.5, 0.5 + r],
                    vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
                    5,
                )
            }
            RuleKind::GaussLobatto4 => {
                let r = 1.0 / (2.0 * 5.0f64.sqrt());
                (
                    vec![0.0, 0.5 - r, 0.5 + r, 1.0],
                    vec![1.0 / 12.0, 5.0 / 12.0, 5.0 / 12.0, 1.0 / 12.0],
                    5,
                )
            }
            RuleKind::Simpson3 => (
                vec![0.0, 0.5, 1.0],
                vec![1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0],
                3,
            ),
            RuleKind::Trapezoid => (vec![0.0, 1.0], vec![0.5, 0.5], 1),
        };
        let includes_endpoints = nodes.first() == Some(&0.0) && nodes.last() == Some(&1.0);
        Self {
            kind,
            nodes,
            weights,
            exactness_degree,
            includes_endpoints,
        }
    }

    /// Replaces the weights without any validation.
    ///
    /// Exists so verification tooling can inject faults; never use it to build
    /// a rule for sampling.
    pub fn with_weights_unchecked(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn exactness_degree(&self) -> usize {
        self.exactness_degree
    }

    pub fn includes_endpoints(&self) -> bool {
        self.includes_endpoints
    }

    /// Nodes strictly inside `(0, 1)`.
    pub fn interior_count(&self) -> usize {
        self.nodes.iter().filter(|&&u| u > 0.0 && u < 1.0).count()
    }

    /// Times `τ = t − h·u` of every node for the interval `[t − h, t]`,
    /// in decreasing order.
    pub fn map_nodes(&self, t: f64, h: f64) -> Result<Vec<f64>> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::InvalidArgument(format!("interval size must be positive, got {h}")));
        }
        if t > 1.0 + 1e-12 || t - h < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "interval [{}, {t}] leaves [0, 1]",
                t - h
            )));
        }
        Ok(self.nodes.iter().map(|u| t - h * u).collect())
    }

    /// `h · Σ wᵢ·vᵢ`, element-wise over equally sized value vectors (one per node).
    pub fn apply<V: AsRef<[f64]>>(&self, values: &[V], h: f64) -> Result<Vec<f64>> {
        if values.len() != self.nodes.len() {
            return Err(Error::Shape(format!(
                "{} rule has {} nodes, got {} values",
                self.kind,
                self.nodes.len(),
                values.len()
            )));
        }
        let width = values[0].as_ref().len();
        if values.iter().any(|v| v.as_ref().len() != width) {
            return Err(Error::Shape("node values differ in length".into()));
        }
        let mut acc = vec![0.0; width];
        for (w, v) in self.weights.iter().zip(values) {
            for (a, x) in acc.iter_mut().zip(v.as_ref()) {
                *a += w * x;
            }
        }
        acc.iter_mut().for_each(|a| *a *= h);
        Ok(acc)
    }

    /// Absolute error of the rule on `∫₀¹ u^k du = 1/(k+1)`.
    pub fn monomial_error(&self, k: usize) -> f64 {
        let approx: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| w * u.powi(k as i32))
            .sum();
        (approx - 1.0 / (k as f64 + 1.0)).abs()
    }

    /// Largest `d` such that every monomial of degree `0..=d` integrates within
    /// [`EXACTNESS_TOL`], or `None` when even the constant fails.
    pub fn exactness_check(&self) -> Option<usize> {
        (0..=32)
            .take_while(|&k| self.monomial_error(k) <= EXACTNESS_TOL)
            .last()
    }

    /// Checks ordering, normalization, endpoint flag and measured exactness.
    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| Err(Error::InvalidArgument(format!("{} rule: {why}", self.kind)));
        if self.nodes.len() != self.weights.len() || self.nodes.is_empty() {
            return fail("node and weight counts differ".into());
        }
        if self.nodes.windows(2).any(|w| w[0] >= w[1])
            || self.nodes.iter().any(|u| !(0.0..=1.0).contains(u))
        {
            return fail("nodes must be strictly increasing within [0, 1]".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-14 {
            return fail(format!("weights sum to {total}"));
        }
        let has_ends = self.nodes.contains(&0.0) && self.nodes.contains(&1.0);
        if has_ends != self.includes_endpoints {
            return fail("endpoint flag disagrees with nodes".into());
        }
        match self.exactness_check() {
            Some(d) if d == self.exactness_degree => Ok(()),
            measured => fail(format!(
                "declared exactness degree {}, measured {measured:?}",
                self.exactness_degree
            )),
        }
    }
}

pub fn make_rule(kind: RuleKind) -> QuadratureRule {
    QuadratureRule::new(kind)
}
