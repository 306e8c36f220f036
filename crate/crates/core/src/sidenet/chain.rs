//! Chain-based SideNet training.
//!
//! Each chain starts from a point `x_t` on the straight data-noise path at a
//! uniformly drawn `t` and rolls the solver forward for up to `chain_length`
//! links. A link draws an interval `h` from a truncated exponential, advances
//! the state with the SideNet's own quadrature estimate, evaluates the
//! backbone once at the new state and matches the SideNet's prediction of that
//! velocity. The new backbone velocity becomes the next link's anchor, so a
//! chain of `K` links costs `K + 1` backbone evaluations.
//!
//! Chain states and backbone velocities are constants for the gradient (stop
//! gradient); only the matching predictions carry SideNet gradients. Besides
//! the look-ahead term `v_t − h·S(x_t, v_t, t, −h) ≈ v_{t−h}` every link adds
//! the mirrored look-back term `v_{t−h} + h·S(x_{t−h}, v_{t−h}, t−h, +h) ≈ v_t`
//! from the same two evaluations, which trains the positive offsets the
//! bi-anchor solver uses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{predict_velocities, DeviationQueries, SideNetModel};
use crate::flow::{FlowProblem, Metered, VelocityField};
use crate::nnet::{AdamState, Gradients};
use crate::quadrature::{QuadratureRule, RuleKind};
use crate::rng::{self, stream, ChaCha8Rng};
use crate::{Error, Result, TensorBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainTrainConfig {
    #[serde(default = "ChainTrainConfig::default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "ChainTrainConfig::default_n_freq")]
    pub n_freq: usize,
    #[serde(default = "ChainTrainConfig::default_chain_length")]
    pub chain_length: usize,
    #[serde(default = "ChainTrainConfig::default_lambda")]
    pub lambda_trunc: f64,
    #[serde(default = "ChainTrainConfig::default_h_min")]
    pub h_min: f64,
    #[serde(default = "ChainTrainConfig::default_h_max")]
    pub h_max: f64,
    #[serde(default = "ChainTrainConfig::default_rule")]
    pub rule: RuleKind,
    #[serde(default = "ChainTrainConfig::default_symmetric_weight")]
    pub symmetric_weight: f64,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default = "ChainTrainConfig::default_lr")]
    pub lr: f64,
    pub seed: u64,
}

impl ChainTrainConfig {
    fn default_hidden() -> Vec<usize> {
        vec![64, 64]
    }
    fn default_n_freq() -> usize {
        4
    }
    fn default_chain_length() -> usize {
        8
    }
    fn default_lambda() -> f64 {
        50.0
    }
    fn default_h_min() -> f64 {
        0.01
    }
    fn default_h_max() -> f64 {
        0.5
    }
    fn default_rule() -> RuleKind {
        RuleKind::GaussLegendre3
    }
    fn default_symmetric_weight() -> f64 {
        1.0
    }
    fn default_lr() -> f64 {
        1e-4
    }

    pub fn new(batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            hidden: Self::default_hidden(),
            n_freq: Self::default_n_freq(),
            chain_length: Self::default_chain_length(),
            lambda_trunc: Self::default_lambda(),
            h_min: Self::default_h_min(),
            h_max: Self::default_h_max(),
            rule: Self::default_rule(),
            symmetric_weight: Self::default_symmetric_weight(),
            batch_size,
            iterations,
            lr: Self::default_lr(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.chain_length == 0 {
            return bad("chain_length must be at least 1".into());
        }
        if !(0.0 < self.h_min && self.h_min < self.h_max && self.h_max <= 1.0) {
            return bad(format!(
                "need 0 < h_min < h_max <= 1, got h_min = {}, h_max = {}",
                self.h_min, self.h_max
            ));
        }
        if self.lambda_trunc.is_nan() || self.lambda_trunc <= 0.0 {
            return bad(format!("lambda_trunc must be positive, got {}", self.lambda_trunc));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.symmetric_weight.is_nan() || self.symmetric_weight < 0.0 {
            return bad("symmetric_weight must be non-negative".into());
        }
        Ok(())
    }
}

/// Inverse CDF of `Exp(lambda)` restricted to `[lo, hi]`, at `u ∈ [0, 1)`.
pub fn truncated_exp_inverse_cdf(u: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    let mass = -(-lambda * (hi - lo)).exp_m1();
    let h = lo - (-u * mass).ln_1p() / lambda;
    h.clamp(lo, hi)
}

/// Interval size from `Exp(lambda)` truncated to `[h_min, min(h_max, t)]`.
///
/// Fails when `t ≤ h_min`: no admissible interval remains and the chain stops.
pub fn sample_interval(
    rng: &mut ChaCha8Rng,
    lambda: f64,
    t: f64,
    h_min: f64,
    h_max: f64,
) -> Result<f64> {
    if t <= h_min {
        return Err(Error::InvalidArgument(format!(
            "no interval of at least {h_min} fits below t = {t}"
        )));
    }
    let u: f64 = rng.random();
    Ok(truncated_exp_inverse_cdf(u, lambda, h_min, h_max.min(t)))
}

/// Chain starting points: data, noise and start time per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBatch {
    pub data: TensorBuffer,
    pub noise: TensorBuffer,
    pub times: Vec<f64>,
}

impl ChainBatch {
    /// `t ~ U[0, 1]`, `x_noise ~ N(0, I)`, `x_data` from the problem.
    pub fn sample(problem: &FlowProblem, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = problem.sample_data(n, rng);
        let noise = problem.sample_noise(n, rng);
        let times = (0..n).map(|_| rng.random::<f64>()).collect();
        Self { data, noise, times }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Detached matching terms of one training step: each query's prediction
/// `v + Δt·S` is compared with a constant target under a constant weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingSet {
    pub queries: DeviationQueries,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MatchingSet {
    /// `Σ wᵢ ‖v̂ᵢ − targetᵢ‖²` and its SideNet gradient.
    pub fn loss_and_gradients(&self, sidenet: &SideNetModel) -> Result<(f64, Gradients)> {
        let d = self.queries.dim();
        let model = sidenet.model();
        if self.queries.is_empty() {
            return Ok((0.0, Gradients::zeros_like(model)));
        }
        let trace = model.forward_trace(&sidenet.inputs(&self.queries))?;
        let s = trace.output();
        let mut loss = 0.0;
        let mut out_grad = Vec::with_capacity(s.len());
        for i in 0..self.queries.len() {
            let dt = self.queries.offsets[i];
            let w = self.weights[i];
            let v = self.queries.velocity(i);
            let target = &self.targets[i * d..(i + 1) * d];
            for k in 0..d {
                let e = v[k] + dt * s.row(i)[k] - target[k];
                loss += w * e * e;
                out_grad.push(2.0 * w * e * dt);
            }
        }
        let grads = model.backward(&trace, &TensorBuffer::from_rows(d, out_grad))?;
        Ok((loss, grads))
    }

    /// Loss only, from a plain forward pass.
    pub fn loss(&self, sidenet: &SideNetModel) -> Result<f64> {
        let d = self.queries.dim();
        let pred = predict_velocities(sidenet, &self.queries)?;
        Ok(pred
            .iter_rows()
            .enumerate()
            .map(|(i, p)| {
                let target = &self.targets[i * d..(i + 1) * d];
                self.weights[i] * p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum())
    }
}

#[derive(Debug, Clone)]
pub struct ChainStep {
    /// Mean over chains of the per-link matching loss.
    pub loss: f64,
    pub gradients: Gradients,
    /// Batched backbone evaluations issued by this step.
    pub backbone_calls: usize,
    /// Completed links per chain (less than `chain_length` when a chain ran
    /// out of time).
    pub links: Vec<usize>,
    pub matching: MatchingSet,
}

/// One training step over a batch of chains.
pub fn chain_train_step(
    backbone: &dyn VelocityField,
    sidenet: &SideNetModel,
    batch: &ChainBatch,
    config: &ChainTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainStep> {
    config.validate()?;
    let d = backbone.dim();
    if sidenet.model().features().state_dim != d || batch.data.cols() != d || batch.noise.cols() != d {
        return Err(Error::Shape("backbone, SideNet and batch dimensions disagree".into()));
    }
    let n = batch.len();
    if batch.data.rows() != n || batch.noise.rows() != n {
        return Err(Error::Shape("chain batch rows disagree".into()));
    }
    let backbone = Metered::new(backbone);
    let rule = QuadratureRule::new(config.rule);

    let mut t = batch.times.clone();
    let mut x = Vec::with_capacity(n * d);
    for ((xd, xn), &ti) in batch.data.iter_rows().zip(batch.noise.iter_rows()).zip(&t) {
        x.extend(xd.iter().zip(xn).map(|(a, z)| (1.0 - ti) * a + ti * z));
    }
    let mut x = TensorBuffer::from_rows(d, x);
    let mut v = backbone.evaluate(&x, &t)?;

    let mut links = vec![0usize; n];
    // (query, target, chain, symmetric?) gathered before weights are known.
    let mut queries = DeviationQueries::with_capacity(d, 2 * n * config.chain_length);
    let mut targets = Vec::new();
    let mut owners: Vec<(usize, bool)> = Vec::new();

    for _ in 0..config.chain_length {
        let active: Vec<usize> = (0..n).filter(|&r| t[r] > config.h_min).collect();
        if active.is_empty() {
            break;
        }
        let mut h = Vec::with_capacity(active.len());
        for &r in &active {
            h.push(sample_interval(rng, config.lambda_trunc, t[r], config.h_min, config.h_max)?);
        }

        // Solver simulation with SideNet-predicted node velocities.
        let mut sim = DeviationQueries::with_capacity(d, active.len() * rule.len());
        for (&r, &hr) in active.iter().zip(&h) {
            for u in rule.nodes() {
                sim.push(x.row(r), v.row(r), t[r], -hr * u);
            }
        }
        let node_v = predict_velocities(sidenet, &sim)?;
        let mut next_x = Vec::with_capacity(active.len() * d);
        let mut next_t = Vec::with_capacity(active.len());
        for (j, (&r, &hr)) in active.iter().zip(&h).enumerate() {
            let rows: Vec<&[f64]> = (0..rule.len()).map(|k| node_v.row(j * rule.len() + k)).collect();
            let step = rule.apply(&rows, hr)?;
            next_x.extend(x.row(r).iter().zip(&step).map(|(a, s)| a - s));
            next_t.push((t[r] - hr).max(0.0));
        }
        let next_x = TensorBuffer::from_rows(d, next_x);

        // Velocity matching against the backbone at the simulated state.
        let next_v = backbone.evaluate(&next_x, &next_t)?;
        for (j, (&r, &hr)) in active.iter().zip(&h).enumerate() {
            queries.push(x.row(r), v.row(r), t[r], -hr);
            targets.extend_from_slice(next_v.row(j));
            owners.push((r, false));
            if config.symmetric_weight > 0.0 {
                queries.push(next_x.row(j), next_v.row(j), next_t[j], hr);
                targets.extend_from_slice(v.row(r));
                owners.push((r, true));
            }
        }
        for (j, &r) in active.iter().enumerate() {
            x.row_mut(r).copy_from_slice(next_x.row(j));
            v.row_mut(r).copy_from_slice(next_v.row(j));
            t[r] = next_t[j];
            links[r] += 1;
        }
    }

    let chains_used = links.iter().filter(|&&l| l > 0).count();
    let weights = owners
        .iter()
        .map(|&(r, symmetric)| {
            let base = 1.0 / (links[r] as f64 * chains_used as f64);
            if symmetric {
                base * config.symmetric_weight
            } else {
                base
            }
        })
        .collect();
    let matching = MatchingSet {
        queries,
        targets,
        weights,
    };
    let (loss, gradients) = matching.loss_and_gradients(sidenet)?;
    Ok(ChainStep {
        loss,
        gradients,
        backbone_calls: backbone.nfe(),
        links,
        matching,
    })
}

#[derive(Debug, Clone)]
pub struct SidenetTraining {
    pub sidenet: SideNetModel,
    /// Step loss per iteration.
    pub losses: Vec<f64>,
}

/// Adam over [`chain_train_step`] gradients with a frozen backbone.
pub fn train_sidenet(
    backbone: &dyn VelocityField,
    problem: &FlowProblem,
    config: &ChainTrainConfig,
) -> Result<SidenetTraining> {
    config.validate()?;
    let d = backbone.dim();
    if problem.dim() != d {
        return Err(Error::Shape(format!(
            "problem has dim {}, backbone {d}",
            problem.dim()
        )));
    }
    let mut sidenet = SideNetModel::new(d, &config.hidden, config.n_freq, config.seed)?;
    let mut adam = AdamState::new(sidenet.model(), config.lr);
    let mut data_rng = rng::seeded(config.seed, stream::DATA);
    let mut interval_rng = rng::seeded(config.seed, stream::INTERVAL);
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let batch = ChainBatch::sample(problem, config.batch_size, &mut data_rng);
        let step = chain_train_step(backbone, &sidenet, &batch, config, &mut interval_rng)?;
        if !step.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "SideNet loss became {} at iteration {it}",
                step.loss
            )));
        }
        adam.step(sidenet.model_mut(), &step.gradients)?;
        losses.push(step.loss);
    }
    Ok(SidenetTraining { sidenet, losses })
}
