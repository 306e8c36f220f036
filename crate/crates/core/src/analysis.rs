//! Executable error analysis of the anchored solvers.
//!
//! Two analytic deviation models isolate scheme error from network error:
//! [`OracleSideNet`] predicts node velocities of state-independent fields
//! exactly, while [`DriftSideNet`] predicts `v(x_anchor, τ)` on linear fields
//! and so ignores only the state drift away from the anchor. On top of them
//! this module fits convergence orders, scans one-interval drift error, and
//! compares integrated velocity error between one and two anchors.
//!
//! [`verification_report`] bundles every check into a pass/fail table.

use std::fmt::Write as _;

use serde::Serialize;

use crate::flow::{exact_solution, AnalyticField, TimeProfile, VelocityField};
use crate::quadrature::{QuadratureRule, RuleKind};
use crate::sidenet::{sidenet_predict, DeviationModel, DeviationQueries};
use crate::solvers::{ba_solve, single_anchor_interval, Solver};
use crate::{Error, Result, TensorBuffer};

/// Errors below this are treated as floating-point floor and left out of fits.
pub const ERROR_FLOOR: f64 = 1e-13;
/// Minimum coefficient of determination for an accepted slope fit.
pub const MIN_R_SQUARED: f64 = 0.98;

fn analytic_deviation(
    field: &AnalyticField,
    queries: &DeviationQueries,
) -> Result<TensorBuffer> {
    if queries.dim() != field.dim() {
        return Err(Error::Shape(format!(
            "field has dim {}, queries have {}",
            field.dim(),
            queries.dim()
        )));
    }
    let mut out = Vec::with_capacity(queries.len() * queries.dim());
    for i in 0..queries.len() {
        let (x, t, dt) = (queries.state(i), queries.times[i], queries.offsets[i]);
        if dt == 0.0 {
            out.extend(field.time_derivative(x, t));
        } else {
            let later = field.velocity(x, t + dt);
            let now = field.velocity(x, t);
            out.extend(later.iter().zip(&now).map(|(a, b)| (a - b) / dt));
        }
    }
    Ok(TensorBuffer::from_rows(queries.dim(), out))
}

/// Exact deviation model for a state-independent field:
/// `S = (v(t + Δt) − v(t)) / Δt`, with `v'(t)` at `Δt = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSideNet {
    field: AnalyticField,
}

impl OracleSideNet {
    pub fn new(field: AnalyticField) -> Result<Self> {
        if !field.is_state_independent() {
            return Err(Error::InvalidArgument(
                "the oracle deviation model needs a state-independent field".into(),
            ));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &AnalyticField {
        &self.field
    }
}

impl DeviationModel for OracleSideNet {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn deviation(&self, queries: &DeviationQueries) -> Result<TensorBuffer> {
        analytic_deviation(&self.field, queries)
    }
}

/// Deviation model for a linear field that keeps the anchor state frozen, so
/// its prediction at offset `δ` is `v(x_anchor, t + δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSideNet {
    field: AnalyticField,
}

impl DriftSideNet {
    pub fn new(field: AnalyticField) -> Result<Self> {
        if !matches!(field, AnalyticField::LinearState { .. }) {
            return Err(Error::InvalidArgument(
                "the drift deviation model needs a linear-state field".into(),
            ));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &AnalyticField {
        &self.field
    }
}

impl DeviationModel for DriftSideNet {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn deviation(&self, queries: &DeviationQueries) -> Result<TensorBuffer> {
        analytic_deviation(&self.field, queries)
    }
}

/// Ordinary least squares `y = slope·x + intercept` with its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

/// Slope and R² of `log error` against `log h`, skipping errors below
/// [`ERROR_FLOOR`].
fn log_log_fit(hs: &[f64], errors: &[f64]) -> Result<(f64, f64, usize)> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = hs
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e >= ERROR_FLOOR)
        .map(|(h, e)| (h.ln(), e.ln()))
        .unzip();
    if lx.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} grid points above the error floor, need 3",
            lx.len()
        )));
    }
    let (slope, _, r2) = linear_fit(&lx, &ly);
    Ok((slope, r2, lx.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub n: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub solver: String,
    pub field: String,
    /// Sorted by `n` ascending.
    pub points: Vec<GridPoint>,
    pub slope: f64,
    pub r_squared: f64,
    /// Points above the error floor that entered the fit.
    pub fitted_points: usize,
}

impl ConvergenceReport {
    pub fn well_fitted(&self) -> bool {
        self.r_squared >= MIN_R_SQUARED
    }
}

/// Short identifier of an analytic field for reports.
pub fn describe_field(field: &AnalyticField) -> String {
    match field {
        AnalyticField::TimeOnly { profile, .. } => match profile {
            TimeProfile::Cosine { amplitude, frequency } => format!("{amplitude}*cos({frequency}t)"),
            TimeProfile::Exponential { amplitude, rate } => format!("{amplitude}*exp({rate}t)"),
            TimeProfile::Polynomial(c) => format!("poly{c:?}"),
        },
        AnalyticField::LinearState { rates, forcing } => format!("linear(a={rates:?}, p={forcing:?})"),
    }
}

fn max_row_distance(a: &TensorBuffer, b: &TensorBuffer) -> f64 {
    a.iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Runs `solver` from `x1` for every `N` in `n_grid` and fits the global order
/// of the error `max_row ‖x_0 − x_0^exact‖` against `h = 1/N`.
pub fn fit_order(
    solver: Solver<'_>,
    field: &AnalyticField,
    x1: &TensorBuffer,
    n_grid: &[usize],
) -> Result<ConvergenceReport> {
    let exact = exact_solution(field, x1, 0.0)?;
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut points = Vec::with_capacity(grid.len());
    for n in grid {
        let run = solver.solve(field, x1, n)?;
        points.push(GridPoint {
            n,
            h: 1.0 / n as f64,
            error: max_row_distance(&run.final_state, &exact),
        });
    }
    let hs: Vec<f64> = points.iter().map(|p| p.h).collect();
    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    let (slope, r_squared, fitted_points) = log_log_fit(&hs, &errors)?;
    Ok(ConvergenceReport {
        solver: solver.kind().name().to_string(),
        field: describe_field(field),
        points,
        slope,
        r_squared,
        fitted_points,
    })
}

/// Composite application of `rule` to a state-independent field, with no
/// deviation model in the loop. This is the pure quadrature error baseline.
pub fn bare_quadrature_solve(field: &AnalyticField, x1: &[f64], n: usize, rule: &QuadratureRule) -> Result<Vec<f64>> {
    if !field.is_state_independent() {
        return Err(Error::InvalidArgument("bare quadrature needs a state-independent field".into()));
    }
    let h = 1.0 / n as f64;
    let mut x = x1.to_vec();
    for i in 0..n {
        let t = (n - i) as f64 / n as f64;
        let values: Vec<Vec<f64>> = rule
            .map_nodes(t, h)?
            .into_iter()
            .map(|tau| field.velocity(&x, tau))
            .collect();
        let step = rule.apply(&values, h)?;
        x.iter_mut().zip(step).for_each(|(a, s)| *a -= s);
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LteRow {
    pub h: f64,
    pub local_error: f64,
    /// `½·L·C·h²` with `L` the field's Lipschitz constant and `C = ‖v(x1, 1)‖`.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LteScan {
    pub rows: Vec<LteRow>,
    /// `None` when fewer than three errors clear the floor.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

/// One single-anchor interval `[1 − h, 1]` from `x1` for each `h`, compared
/// with the exact solution.
pub fn single_anchor_lte_scan(
    field: &AnalyticField,
    sidenet: &dyn DeviationModel,
    x1: &[f64],
    h_grid: &[f64],
    rule: &QuadratureRule,
) -> Result<LteScan> {
    let x = TensorBuffer::from_rows(x1.len(), x1.to_vec());
    let v = field.evaluate_at(&x, 1.0)?;
    let speed = v.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let stepped = single_anchor_interval(sidenet, &x, &v, 1.0, h, rule)?;
        let exact = field.solution(x1, 1.0 - h);
        let err = stepped
            .data()
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        rows.push(LteRow {
            h,
            local_error: err,
            predicted: 0.5 * field.lipschitz() * speed * h * h,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.local_error).collect();
    let (slope, r_squared) = match log_log_fit(&hs, &errors) {
        Ok((s, r2, _)) => (Some(s), Some(r2)),
        Err(_) => (None, None),
    };
    Ok(LteScan {
        rows,
        slope,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorRatioRow {
    pub h: f64,
    pub single_anchor_error: f64,
    pub bi_anchor_error: f64,
    /// `E_SA / E_BA`, undefined when the bi-anchor error is at the floor.
    pub ratio: Option<f64>,
}

/// Panels per half-interval for the integrated velocity error.
const RATIO_PANELS: usize = 64;

/// `∫ ‖v(x_τ, τ) − v̂(τ)‖ dτ` over `[lo, hi]` where `v̂` is predicted from the
/// anchor `(x_a, t_a)`, using composite three-point Gauss-Legendre.
fn integrated_velocity_error(
    field: &AnalyticField,
    sidenet: &dyn DeviationModel,
    x1: &[f64],
    anchor_t: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let gl = QuadratureRule::new(RuleKind::GaussLegendre3);
    let width = (hi - lo) / RATIO_PANELS as f64;
    let mut taus = Vec::with_capacity(RATIO_PANELS * gl.len());
    for p in 0..RATIO_PANELS {
        taus.extend(gl.map_nodes(hi - p as f64 * width, width)?);
    }
    let x_anchor = field.solution(x1, anchor_t);
    let v_anchor = field.velocity(&x_anchor, anchor_t);
    let offsets: Vec<f64> = taus.iter().map(|tau| tau - anchor_t).collect();
    let predicted = sidenet_predict(sidenet, &x_anchor, &v_anchor, anchor_t, &offsets)?;
    let errors: Vec<Vec<f64>> = taus
        .iter()
        .zip(&predicted)
        .map(|(&tau, vhat)| {
            let truth = field.velocity(&field.solution(x1, tau), tau);
            let e = truth.iter().zip(vhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            vec![e]
        })
        .collect();
    let mut total = 0.0;
    for panel in errors.chunks_exact(gl.len()) {
        total += gl.apply(panel, width)?[0];
    }
    Ok(total)
}

/// Integrated velocity error over one interval `[1 − h, 1]` from `x1`, with
/// every node predicted from the start anchor (single) or with the half
/// nearer the end predicted from the exact terminal state (bi).
pub fn anchor_error_ratio(
    field: &AnalyticField,
    sidenet: &dyn DeviationModel,
    x1: &[f64],
    h_grid: &[f64],
) -> Result<Vec<AnchorRatioRow>> {
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let (t, end, mid) = (1.0, 1.0 - h, 1.0 - 0.5 * h);
        let near_start = integrated_velocity_error(field, sidenet, x1, t, mid, t)?;
        let sa_far = integrated_velocity_error(field, sidenet, x1, t, end, mid)?;
        let ba_far = integrated_velocity_error(field, sidenet, x1, end, end, mid)?;
        let single = near_start + sa_far;
        let bi = near_start + ba_far;
        rows.push(AnchorRatioRow {
            h,
            single_anchor_error: single,
            bi_anchor_error: bi,
            ratio: (bi >= ERROR_FLOOR).then(|| single / bi),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub rule: String,
    pub declared_degree: usize,
    pub measured_degree: Option<usize>,
    /// First monomial degree the rule does not integrate exactly.
    pub first_failing_degree: usize,
    pub first_failing_error: f64,
}

/// Exactness degrees and first-failing monomial errors of the given rules.
pub fn quadrature_order_table_for(rules: &[QuadratureRule]) -> Vec<OrderRow> {
    rules
        .iter()
        .map(|rule| {
            let measured = rule.exactness_check();
            let failing = measured.map_or(0, |d| d + 1);
            OrderRow {
                rule: rule.kind().name().to_string(),
                declared_degree: rule.exactness_degree(),
                measured_degree: measured,
                first_failing_degree: failing,
                first_failing_error: rule.monomial_error(failing),
            }
        })
        .collect()
}

pub fn quadrature_order_table() -> Vec<OrderRow> {
    let rules: Vec<QuadratureRule> = RuleKind::ALL.into_iter().map(QuadratureRule::new).collect();
    quadrature_order_table_for(&rules)
}

/// Linear test field with equal-magnitude rates, so `‖a ⊙ v‖ = L·‖v‖`.
pub fn reference_linear_field() -> AnalyticField {
    AnalyticField::linear_state(vec![1.0, -1.0], vec![0.5, 1.0])
}

pub const REFERENCE_LINEAR_START: [f64; 2] = [0.4, -0.4];
pub const LTE_H_GRID: [f64; 4] = [0.025, 0.05, 0.1, 0.2];
pub const RATIO_H_GRID: [f64; 3] = [0.05, 0.1, 0.2];

/// Faults that a verification run can inject to prove the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Replaces the Gauss-Lobatto weights with a non-exact set.
    CorruptLobattoWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimCheck {
    pub id: String,
    pub claim: String,
    pub measured: String,
    pub expected: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<ClaimCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ClaimCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "[{status}] {}: {} | measured {} | expected {}",
                c.id, c.claim, c.measured, c.expected
            );
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "{passed}/{} checks passed", self.checks.len());
        out
    }
}

struct Checks(Vec<ClaimCheck>);

impl Checks {
    fn push(&mut self, id: &str, claim: &str, measured: String, expected: &str, passed: bool) {
        self.0.push(ClaimCheck {
            id: id.to_string(),
            claim: claim.to_string(),
            measured,
            expected: expected.to_string(),
            passed,
        });
    }

    fn order(&mut self, id: &str, claim: &str, report: Result<ConvergenceReport>, lo: f64, hi: f64) {
        let expected = if hi.is_finite() {
            format!("slope in [{lo}, {hi}], R^2 >= {MIN_R_SQUARED}")
        } else {
            format!("slope >= {lo}, R^2 >= {MIN_R_SQUARED}")
        };
        match report {
            Ok(r) => self.push(
                id,
                claim,
                format!("slope {:.4}, R^2 {:.5}", r.slope, r.r_squared),
                &expected,
                (lo..=hi).contains(&r.slope) && r.well_fitted(),
            ),
            Err(e) => self.push(id, claim, format!("error: {e}"), &expected, false),
        }
    }
}

/// Runs every analysis check with its acceptance bound.
pub fn verification_report(fault: Option<Fault>) -> Result<VerifyReport> {
    let mut checks = Checks(Vec::new());

    let mut lobatto = QuadratureRule::new(RuleKind::GaussLobatto4);
    if fault == Some(Fault::CorruptLobattoWeights) {
        lobatto = lobatto.with_weights_unchecked(vec![0.1, 0.4, 0.4, 0.1]);
    }
    let rules = [
        lobatto.clone(),
        QuadratureRule::new(RuleKind::GaussLegendre3),
        QuadratureRule::new(RuleKind::Simpson3),
        QuadratureRule::new(RuleKind::Trapezoid),
    ];
    for row in quadrature_order_table_for(&rules) {
        let measured = row.measured_degree.map_or(-1, |d| d as i64);
        checks.push(
            &format!("exactness/{}", row.rule),
            "integrates monomials up to the declared degree within 1e-12",
            format!(
                "exact through degree {measured}, degree {} error {:.3e}",
                row.first_failing_degree, row.first_failing_error
            ),
            &format!("exact through degree {}", row.declared_degree),
            measured >= row.declared_degree as i64,
        );
    }

    let cos = AnalyticField::time_only(1, TimeProfile::cos());
    let exp = AnalyticField::time_only(1, TimeProfile::exp());
    let x1 = TensorBuffer::from_rows(1, vec![0.0]);
    let coarse = [4, 8, 16, 32];
    let fine = [2, 3, 4, 6, 8];
    checks.order(
        "order/euler",
        "Euler converges at first order on v = cos t",
        fit_order(Solver::Euler, &cos, &x1, &coarse),
        0.85,
        1.15,
    );
    checks.order(
        "order/heun",
        "Heun converges at second order on v = cos t",
        fit_order(Solver::Heun, &cos, &x1, &coarse),
        1.85,
        2.15,
    );
    for (name, field) in [("cos", &cos), ("exp", &exp)] {
        let oracle = OracleSideNet::new(field.clone())?;
        let solver = Solver::BiAnchor {
            sidenet: &oracle,
            rule: &lobatto,
        };
        checks.order(
            &format!("order/bi_anchor_{name}"),
            "bi-anchor with exact node velocities and Gauss-Lobatto converges at sixth order",
            fit_order(solver, field, &x1, &fine),
            5.5,
            f64::INFINITY,
        );

        let mut worst = 0.0f64;
        for n in fine {
            let ba = ba_solve(field, &oracle, &x1, n, &lobatto)?;
            let bare = bare_quadrature_solve(field, x1.data(), n, &lobatto)?;
            let exact = field.solution(x1.data(), 0.0);
            let gap = ((ba.final_state.data()[0] - exact[0]).abs() - (bare[0] - exact[0]).abs()).abs();
            worst = worst.max(gap);
        }
        checks.push(
            &format!("separation/{name}"),
            "with exact node velocities the bi-anchor error equals the bare quadrature error",
            format!("max gap {worst:.3e}"),
            "gap <= 1e-12",
            worst <= 1e-12,
        );
    }

    let field = reference_linear_field();
    let drift = DriftSideNet::new(field.clone())?;
    let scan = single_anchor_lte_scan(&field, &drift, &REFERENCE_LINEAR_START, &LTE_H_GRID, &lobatto)?;
    checks.push(
        "drift/slope",
        "single-anchor local error grows quadratically with the interval size",
        match (scan.slope, scan.r_squared) {
            (Some(s), Some(r2)) => format!("slope {s:.4}, R^2 {r2:.5}"),
            _ => "fewer than 3 usable points".into(),
        },
        "slope in [1.8, 2.2], R^2 >= 0.98",
        matches!((scan.slope, scan.r_squared), (Some(s), Some(r2)) if (1.8..=2.2).contains(&s) && r2 >= MIN_R_SQUARED),
    );
    let small = &scan.rows[0];
    let rel = (small.local_error - small.predicted).abs() / small.predicted;
    checks.push(
        "drift/closed_form",
        "single-anchor local error matches 0.5*L*C*h^2 at small h",
        format!("h {}: error {:.4e}, closed form {:.4e}", small.h, small.local_error, small.predicted),
        "relative gap <= 0.3",
        rel <= 0.3,
    );

    for row in anchor_error_ratio(&field, &drift, &REFERENCE_LINEAR_START, &RATIO_H_GRID)? {
        checks.push(
            &format!("anchor_ratio/h={}", row.h),
            "a second anchor halves the integrated velocity error",
            match row.ratio {
                Some(r) => format!("E_SA/E_BA {r:.4}"),
                None => "undefined".into(),
            },
            "ratio in [1.6, 2.4]",
            row.ratio.is_some_and(|r| (1.6..=2.4).contains(&r)),
        );
    }

    Ok(VerifyReport { checks: checks.0 })
}
