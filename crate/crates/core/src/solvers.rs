//! Sampling algorithms on a uniform grid `t_i = (N − i) / N`, from noise at
//! `t = 1` to data at `t = 0`.
//!
//! | solver         | backbone evaluations |
//! |----------------|----------------------|
//! | Euler          | `N`                  |
//! | Heun           | `2N`                 |
//! | single anchor  | `N`                  |
//! | bi-anchor      | `N`                  |
//!
//! The anchored solvers integrate each interval with a quadrature rule whose
//! node velocities come from a [`DeviationModel`]. The bi-anchor solver first
//! predicts every node from the start anchor, evaluates the backbone at the
//! predicted end state, re-predicts the nodes closer to the end from that
//! terminal anchor, and integrates again. The terminal evaluation is reused as
//! the next start anchor; the final interval stops after the first prediction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::flow::{Metered, VelocityField};
use crate::quadrature::{QuadratureRule, RuleKind};
use crate::sidenet::{predict_velocities, DeviationModel, DeviationQueries};
use crate::{Error, Result, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Euler,
    Heun,
    SingleAnchor,
    BiAnchor,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Euler,
        SolverKind::Heun,
        SolverKind::SingleAnchor,
        SolverKind::BiAnchor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Heun => "heun",
            SolverKind::SingleAnchor => "single_anchor",
            SolverKind::BiAnchor => "bi_anchor",
        }
    }

    /// Backbone evaluations for `n` intervals.
    pub fn nfe(self, n: usize) -> usize {
        match self {
            SolverKind::Heun => 2 * n,
            _ => n,
        }
    }

    pub fn needs_sidenet(self) -> bool {
        matches!(self, SolverKind::SingleAnchor | SolverKind::BiAnchor)
    }

    pub fn anchor_mode(self) -> Option<AnchorMode> {
        match self {
            SolverKind::SingleAnchor => Some(AnchorMode::Single),
            SolverKind::BiAnchor => Some(AnchorMode::Bi),
            _ => None,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "solver",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    Single,
    Bi,
}

/// Endpoint rule with `k` interior (SideNet-predicted) nodes.
pub fn rule_for_intermediate_count(k: usize) -> Result<RuleKind> {
    match k {
        0 => Ok(RuleKind::Trapezoid),
        1 => Ok(RuleKind::Simpson3),
        2 => Ok(RuleKind::GaussLobatto4),
        _ => Err(Error::InvalidArgument(format!(
            "no endpoint rule with {k} intermediate nodes"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub solver: SolverKind,
    pub intervals: usize,
    #[serde(default = "SamplerConfig::default_rule")]
    pub rule: RuleKind,
}

impl SamplerConfig {
    fn default_rule() -> RuleKind {
        RuleKind::GaussLobatto4
    }

    pub fn new(solver: SolverKind, intervals: usize) -> Self {
        Self {
            solver,
            intervals,
            rule: Self::default_rule(),
        }
    }

    /// SideNet-predicted nodes per interval (zero for the baselines).
    pub fn intermediate_count(&self) -> usize {
        if self.solver.needs_sidenet() {
            QuadratureRule::new(self.rule).interior_count()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::InvalidArgument("at least one interval is required".into()));
        }
        if self.solver == SolverKind::BiAnchor && !QuadratureRule::new(self.rule).includes_endpoints() {
            return Err(Error::InvalidArgument(format!(
                "the bi-anchor solver needs a rule with both endpoints, got {}",
                self.rule
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub states: TensorBuffer,
    /// Backbone evaluations spent so far when this state is reached.
    pub nfe_so_far: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingResult {
    pub final_state: TensorBuffer,
    /// Grid times from 1 down to 0 with the states reached there.
    pub trajectory: Vec<TrajectoryPoint>,
    pub nfe: usize,
    /// Batched deviation-model calls.
    pub sidenet_batches: usize,
}

/// A solver together with whatever it needs besides the backbone.
#[derive(Clone, Copy)]
pub enum Solver<'a> {
    Euler,
    Heun,
    SingleAnchor {
        sidenet: &'a dyn DeviationModel,
        rule: &'a QuadratureRule,
    },
    BiAnchor {
        sidenet: &'a dyn DeviationModel,
        rule: &'a QuadratureRule,
    },
}

impl Solver<'_> {
    pub fn kind(&self) -> SolverKind {
        match self {
            Solver::Euler => SolverKind::Euler,
            Solver::Heun => SolverKind::Heun,
            Solver::SingleAnchor { .. } => SolverKind::SingleAnchor,
            Solver::BiAnchor { .. } => SolverKind::BiAnchor,
        }
    }

    pub fn solve(&self, field: &dyn VelocityField, x1: &TensorBuffer, n: usize) -> Result<SamplingResult> {
        match *self {
            Solver::Euler => euler_solve(field, x1, n),
            Solver::Heun => heun_solve(field, x1, n),
            Solver::SingleAnchor { sidenet, rule } => single_anchor_solve(field, sidenet, x1, n, rule),
            Solver::BiAnchor { sidenet, rule } => ba_solve(field, sidenet, x1, n, rule),
        }
    }
}

fn grid_time(i: usize, n: usize) -> f64 {
    (n - i) as f64 / n as f64
}

fn check_inputs(field: &dyn VelocityField, x1: &TensorBuffer, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("at least one interval is required".into()));
    }
    if x1.shape().len() != 2 || x1.cols() != field.dim() || x1.rows() == 0 {
        return Err(Error::Shape(format!(
            "initial states {:?} do not fit a field of dim {}",
            x1.shape(),
            field.dim()
        )));
    }
    Ok(())
}

/// Counts batched deviation calls made through it.
struct CountingModel<'a> {
    inner: &'a dyn DeviationModel,
    calls: std::cell::Cell<usize>,
}

impl<'a> CountingModel<'a> {
    fn new(inner: &'a dyn DeviationModel) -> Self {
        Self {
            inner,
            calls: std::cell::Cell::new(0),
        }
    }
}

impl DeviationModel for CountingModel<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn deviation(&self, queries: &DeviationQueries) -> Result<TensorBuffer> {
        self.calls.set(self.calls.get() + 1);
        self.inner.deviation(queries)
    }
}

struct Recorder {
    trajectory: Vec<TrajectoryPoint>,
}

impl Recorder {
    fn new(x1: &TensorBuffer) -> Self {
        Self {
            trajectory: vec![TrajectoryPoint {
                t: 1.0,
                states: x1.clone(),
                nfe_so_far: 0,
            }],
        }
    }

    fn push(&mut self, t: f64, states: &TensorBuffer, nfe: usize) -> Result<()> {
        if !states.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at t = {t}")));
        }
        self.trajectory.push(TrajectoryPoint {
            t,
            states: states.clone(),
            nfe_so_far: nfe,
        });
        Ok(())
    }

    fn finish(self, kind: SolverKind, n: usize, nfe: usize, sidenet_batches: usize) -> SamplingResult {
        assert_eq!(nfe, kind.nfe(n), "{kind} with {n} intervals");
        let final_state = self.trajectory.last().expect("never empty").states.clone();
        SamplingResult {
            final_state,
            trajectory: self.trajectory,
            nfe,
            sidenet_batches,
        }
    }
}

fn axpy(x: &TensorBuffer, scale: f64, v: &[f64]) -> TensorBuffer {
    let data = x.data().iter().zip(v).map(|(a, b)| a + scale * b).collect();
    TensorBuffer::from_rows(x.cols(), data)
}

/// `x_{t−h} = x_t − h·v(x_t, t)`.
pub fn euler_solve(field: &dyn VelocityField, x1: &TensorBuffer, n: usize) -> Result<SamplingResult> {
    check_inputs(field, x1, n)?;
    let field = Metered::new(field);
    let h = 1.0 / n as f64;
    let mut x = x1.clone();
    let mut rec = Recorder::new(x1);
    for i in 0..n {
        let v = field.evaluate_at(&x, grid_time(i, n))?;
        x = axpy(&x, -h, v.data());
        rec.push(grid_time(i + 1, n), &x, field.nfe())?;
    }
    Ok(rec.finish(SolverKind::Euler, n, field.nfe(), 0))
}

/// Euler predictor followed by the trapezoidal corrector
/// `x_{t−h} = x_t − h/2·(v(x_t, t) + v(x̃, t − h))`.
pub fn heun_solve(field: &dyn VelocityField, x1: &TensorBuffer, n: usize) -> Result<SamplingResult> {
    check_inputs(field, x1, n)?;
    let field = Metered::new(field);
    let h = 1.0 / n as f64;
    let mut x = x1.clone();
    let mut rec = Recorder::new(x1);
    for i in 0..n {
        let (t, t_next) = (grid_time(i, n), grid_time(i + 1, n));
        let v = field.evaluate_at(&x, t)?;
        let predicted = axpy(&x, -h, v.data());
        let v_end = field.evaluate_at(&predicted, t_next)?;
        let mean: Vec<f64> = v.data().iter().zip(v_end.data()).map(|(a, b)| 0.5 * (a + b)).collect();
        x = axpy(&x, -h, &mean);
        rec.push(t_next, &x, field.nfe())?;
    }
    Ok(rec.finish(SolverKind::Heun, n, field.nfe(), 0))
}

/// One single-anchor interval: every node velocity is predicted from the
/// anchor `(x, v)` at `t`, and the state moves by
/// `h·v + h·Σ wᵢ·(τᵢ − t)·S(x, v, t, τᵢ − t)`.
///
/// Writing the update as anchor plus deviations makes a model that predicts no
/// deviation reproduce the Euler step exactly.
pub fn single_anchor_interval(
    sidenet: &dyn DeviationModel,
    x: &TensorBuffer,
    v: &TensorBuffer,
    t: f64,
    h: f64,
    rule: &QuadratureRule,
) -> Result<TensorBuffer> {
    let d = x.cols();
    let offsets: Vec<(usize, f64)> = rule
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, &u)| u != 0.0)
        .map(|(k, &u)| (k, -h * u))
        .collect();
    let mut q = DeviationQueries::with_capacity(d, x.rows() * offsets.len());
    for (xr, vr) in x.iter_rows().zip(v.iter_rows()) {
        for &(_, dt) in &offsets {
            q.push(xr, vr, t, dt);
        }
    }
    let s = sidenet.deviation(&q)?;
    let mut out = Vec::with_capacity(x.len());
    for (r, (xr, vr)) in x.iter_rows().zip(v.iter_rows()).enumerate() {
        let mut delta = vec![0.0; d];
        for (j, &(k, dt)) in offsets.iter().enumerate() {
            let coeff = h * rule.weights()[k] * dt;
            for (acc, sv) in delta.iter_mut().zip(s.row(r * offsets.len() + j)) {
                *acc += coeff * sv;
            }
        }
        out.extend(xr.iter().zip(vr).zip(&delta).map(|((a, b), c)| a - (h * b + c)));
    }
    Ok(TensorBuffer::from_rows(d, out))
}

pub fn single_anchor_solve(
    field: &dyn VelocityField,
    sidenet: &dyn DeviationModel,
    x1: &TensorBuffer,
    n: usize,
    rule: &QuadratureRule,
) -> Result<SamplingResult> {
    check_inputs(field, x1, n)?;
    let field = Metered::new(field);
    let model = CountingModel::new(sidenet);
    let h = 1.0 / n as f64;
    let mut x = x1.clone();
    let mut rec = Recorder::new(x1);
    for i in 0..n {
        let t = grid_time(i, n);
        let v = field.evaluate_at(&x, t)?;
        x = single_anchor_interval(&model, &x, &v, t, h, rule)?;
        rec.push(grid_time(i + 1, n), &x, field.nfe())?;
    }
    Ok(rec.finish(SolverKind::SingleAnchor, n, field.nfe(), model.calls.get()))
}

/// Interior nodes split by proximity: a node goes to `backward` when it is
/// strictly closer to the interval end `t − h` than to its start `t`.
/// Endpoint nodes are anchors and belong to neither set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    pub forward: Vec<usize>,
    pub backward: Vec<usize>,
}

/// Distances are measured on the reference nodes (`h·u` from the start,
/// `h·(1 − u)` from the end) so that a midpoint ties exactly and stays forward.
pub fn partition_nodes(rule: &QuadratureRule, h: f64) -> NodePartition {
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for (k, &u) in rule.nodes().iter().enumerate() {
        if u == 0.0 || u == 1.0 {
            continue;
        }
        if h * (1.0 - u) < h * u {
            backward.push(k);
        } else {
            forward.push(k);
        }
    }
    NodePartition { forward, backward }
}

/// Velocities at every node for all rows, predicted from the anchor at node
/// `anchor_u` (0 for the start, 1 for the end). `nodes` selects which nodes to
/// predict; the result holds one `rows × d` block per node, empty for nodes
/// not requested.
#[allow(clippy::too_many_arguments)]
fn predict_nodes(
    model: &dyn DeviationModel,
    x: &TensorBuffer,
    v: &TensorBuffer,
    anchor_t: f64,
    anchor_u: f64,
    h: f64,
    rule: &QuadratureRule,
    nodes: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let d = x.cols();
    let mut q = DeviationQueries::with_capacity(d, x.rows() * nodes.len());
    for (xr, vr) in x.iter_rows().zip(v.iter_rows()) {
        for &k in nodes {
            q.push(xr, vr, anchor_t, h * (anchor_u - rule.nodes()[k]));
        }
    }
    let mut out = vec![Vec::new(); rule.len()];
    if nodes.is_empty() {
        return Ok(out);
    }
    let pred = predict_velocities(model, &q)?;
    for &k in nodes {
        out[k].reserve(x.len());
    }
    for r in 0..x.rows() {
        for (j, &k) in nodes.iter().enumerate() {
            out[k].extend_from_slice(pred.row(r * nodes.len() + j));
        }
    }
    Ok(out)
}

/// Bi-anchor interpolation sampling with exactly `n` backbone evaluations.
pub fn ba_solve(
    field: &dyn VelocityField,
    sidenet: &dyn DeviationModel,
    x1: &TensorBuffer,
    n: usize,
    rule: &QuadratureRule,
) -> Result<SamplingResult> {
    check_inputs(field, x1, n)?;
    if !rule.includes_endpoints() {
        return Err(Error::InvalidArgument(format!(
            "the bi-anchor solver needs a rule with both endpoints, got {}",
            rule.kind()
        )));
    }
    let field = Metered::new(field);
    let model = CountingModel::new(sidenet);
    let h = 1.0 / n as f64;
    let last = rule.len() - 1;
    let partition = partition_nodes(rule, h);
    let non_start: Vec<usize> = (1..rule.len()).collect();

    let mut x = x1.clone();
    let mut v = field.evaluate_at(&x, 1.0)?;
    let mut rec = Recorder::new(x1);
    for i in 0..n {
        let (t, t_end) = (grid_time(i, n), grid_time(i + 1, n));

        // Forward probe: all nodes from the start anchor.
        let mut values = predict_nodes(&model, &x, &v, t, 0.0, h, rule, &non_start)?;
        values[0] = v.data().to_vec();
        let step = rule.apply(&values, h)?;
        let x_pred = axpy(&x, -1.0, &step);
        if i + 1 == n {
            rec.push(t_end, &x_pred, field.nfe())?;
            break;
        }

        // Backward refinement from the terminal anchor.
        let v_end = field.evaluate_at(&x_pred, t_end)?;
        let refined = predict_nodes(&model, &x_pred, &v_end, t_end, 1.0, h, rule, &partition.backward)?;
        for &k in &partition.backward {
            values[k] = refined[k].clone();
        }
        values[last] = v_end.data().to_vec();

        // Integration and state reuse.
        let step = rule.apply(&values, h)?;
        x = axpy(&x, -1.0, &step);
        v = v_end;
        rec.push(t_end, &x, field.nfe())?;
    }
    Ok(rec.finish(SolverKind::BiAnchor, n, field.nfe(), model.calls.get()))
}
