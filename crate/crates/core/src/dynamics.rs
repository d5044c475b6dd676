//! Euler–Maruyama integration of the interacting particle system
//!
//! `zᵢ ← zᵢ − η(k)·ε·∇f(xᵢ) + ε·θ Σⱼ A_ij (zⱼ − zᵢ) + σ(k)·√ε·ξᵢ`, `xᵢ = ∇Φ*(zᵢ)`.
//!
//! Only the gradient carries `η`; the interaction term does not. All drifts
//! are taken from the pre-update state. Gradient noise and diffusion noise
//! are drawn from counter-based streams keyed by `(seed, step, particle)`, so
//! a run does not depend on thread count and particle `i` of an
//! interaction-free ensemble reproduces a single-particle run with the same
//! particle id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::graph::InteractionGraph;
use crate::metrics::{RunTrace, TraceRecorder};
use crate::mirror::{MapKind, MirrorMap};
use crate::objective::{GradientNoise, NoiseKey, Objective, ObjectiveError};
use crate::rng::{self, Stream};

/// `‖Z‖_∞` above which a run is flagged as unstable.
pub const SOFT_DIVERGENCE: f64 = 1e8;

/// Rows per work item; matches the dense gradient block height.
const CHUNK_ROWS: usize = 16;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("divergence at step {step}: particle {particle} has a non-finite entry (max |z| before the step was {max_abs:e}); reduce epsilon or eta")]
    Divergence { step: u64, particle: usize, max_abs: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Step-dependent coefficient `η(k)` or `σ(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { base: f64 },
    /// `base / √(k+1)`.
    InverseSqrt { base: f64 },
    /// `base / (k+1)^exponent`.
    PowerDecay { base: f64, exponent: f64 },
}

impl Schedule {
    pub fn constant(base: f64) -> Self {
        Schedule::Constant { base }
    }

    pub fn value(&self, k: u64) -> f64 {
        let kp = (k + 1) as f64;
        match *self {
            Schedule::Constant { base } => base,
            Schedule::InverseSqrt { base } => base / kp.sqrt(),
            Schedule::PowerDecay { base, exponent } => base / kp.powf(exponent),
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            Schedule::Constant { base } | Schedule::InverseSqrt { base } | Schedule::PowerDecay { base, .. } => base,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.base() == 0.0
    }

    fn validate(&self, what: &str) -> Result<(), DynamicsError> {
        let base = self.base();
        if !(base.is_finite() && base >= 0.0) {
            return Err(DynamicsError::Config(format!("{what} base must be finite and non-negative, got {base}")));
        }
        if let Schedule::PowerDecay { exponent, .. } = *self {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return Err(DynamicsError::Config(format!("{what} exponent must be finite and non-negative, got {exponent}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub epsilon: f64,
    pub eta: Schedule,
    pub sigma: Schedule,
    pub n_steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub gradient_noise: GradientNoise,
    #[serde(default)]
    pub execution: Execution,
}

impl IntegratorConfig {
    pub fn new(epsilon: f64, eta: Schedule, sigma: Schedule, n_steps: u64, seed: u64) -> Self {
        Self { epsilon, eta, sigma, n_steps, seed, gradient_noise: GradientNoise::Exact, execution: Execution::Auto }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DynamicsError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_steps == 0 {
            return Err(DynamicsError::Config("n_steps must be at least 1".into()));
        }
        self.eta.validate("eta")?;
        self.sigma.validate("sigma")
    }
}

/// How particles are initialized in mirror space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    /// `Z = 0`: the barycenter under the entropy map.
    #[default]
    Zeros,
    /// I.i.d. `N(0, scale²)` entries.
    Gaussian { scale: f64 },
}

/// Mirror states `Z`, primal images `X = ∇Φ*(Z)` (row-major `N × d`), step and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n: usize,
    d: usize,
    z: Vec<f64>,
    x: Vec<f64>,
    step: u64,
    time: f64,
    first_particle: u64,
}

impl Ensemble {
    pub fn from_mirror(map: &MirrorMap, z: Vec<f64>, n: usize) -> Result<Self, DynamicsError> {
        let d = map.dim();
        if n == 0 || z.len() != n * d {
            return Err(DynamicsError::Dimension(format!("expected {n}×{d} mirror state, got {} values", z.len())));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::Dimension(format!("non-finite initial entry at particle {}", i / d)));
        }
        let mut x = vec![0.0; z.len()];
        for (zr, xr) in z.chunks_exact(d).zip(x.chunks_exact_mut(d)) {
            map.grad_conjugate_into(zr, xr);
        }
        Ok(Self { n, d, z, x, step: 0, time: 0.0, first_particle: 0 })
    }

    /// `N` particles with ids `0..N`.
    pub fn initialize(map: &MirrorMap, n: usize, init: Init, seed: u64) -> Result<Self, DynamicsError> {
        Self::initialize_ids(map, n, init, seed, 0)
    }

    /// `N` particles with ids `first..first+N`; particle `i` draws its
    /// initial state and all of its noise from id-keyed streams.
    pub fn initialize_ids(map: &MirrorMap, n: usize, init: Init, seed: u64, first: u64) -> Result<Self, DynamicsError> {
        let d = map.dim();
        let mut z = vec![0.0; n * d];
        if let Init::Gaussian { scale } = init {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(DynamicsError::Config(format!("initial scale must be non-negative, got {scale}")));
            }
            for (i, row) in z.chunks_exact_mut(d).enumerate() {
                let mut r = rng::counter_rng(seed, Stream::Initial, 0, first + i as u64);
                rng::fill_standard_normal(&mut r, row);
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let mut ens = Self::from_mirror(map, z, n)?;
        ens.first_particle = first;
        Ok(ens)
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mirror(&self) -> &[f64] {
        &self.z
    }

    pub fn primal(&self) -> &[f64] {
        &self.x
    }

    pub fn mirror_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn primal_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn first_particle(&self) -> u64 {
        self.first_particle
    }

    /// `z̄`, summed in ascending particle order.
    pub fn mirror_mean(&self) -> Vec<f64> {
        crate::metrics::row_mean(&self.z, self.d)
    }

    pub fn max_abs(&self) -> f64 {
        self.z.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Coefficients of the step just taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub k: u64,
    pub eta: f64,
    pub sigma: f64,
}

pub struct Integrator<'a> {
    obj: &'a dyn Objective,
    map: &'a MirrorMap,
    graph: &'a InteractionGraph,
    cfg: IntegratorConfig,
    grads: Vec<f64>,
    noise: Vec<f64>,
    next: Vec<f64>,
    /// First step at which `‖Z‖_∞` exceeded [`SOFT_DIVERGENCE`].
    pub large_state_step: Option<u64>,
}

impl<'a> Integrator<'a> {
    pub fn new(obj: &'a dyn Objective, map: &'a MirrorMap, graph: &'a InteractionGraph, cfg: IntegratorConfig) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        let d = obj.dim();
        if map.dim() != d {
            return Err(DynamicsError::Dimension(format!("mirror map has dimension {}, objective {d}", map.dim())));
        }
        if !obj.supports(cfg.gradient_noise) {
            return Err(ObjectiveError::Unsupported { noise: cfg.gradient_noise, objective: obj.name() }.into());
        }
        // Surface parameter errors (e.g. an oversized batch) before the run starts.
        let probe = vec![1.0 / d as f64; d];
        let mut g = vec![0.0; d];
        obj.noisy_grad_into(&probe, cfg.gradient_noise, NoiseKey { seed: cfg.seed, step: 0, particle: 0 }, &mut g)?;
        Ok(Self { obj, map, graph, cfg, grads: Vec::new(), noise: Vec::new(), next: Vec::new(), large_state_step: None })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// Gradients used by the last step (row-major `N × d`).
    pub fn last_gradients(&self) -> &[f64] {
        &self.grads
    }

    /// Standard-normal draws `ξ` of the last step (zeros when `σ(k) = 0`).
    pub fn last_noise(&self) -> &[f64] {
        &self.noise
    }

    fn check(&self, ens: &Ensemble) -> Result<(), DynamicsError> {
        if ens.d != self.obj.dim() || ens.n != self.graph.n_particles() {
            return Err(DynamicsError::Dimension(format!(
                "ensemble is {}×{}, graph has {} particles and objective dimension {}",
                ens.n,
                ens.d,
                self.graph.n_particles(),
                self.obj.dim()
            )));
        }
        Ok(())
    }

    fn compute_gradients(&mut self, ens: &Ensemble) {
        let d = ens.d;
        let obj = self.obj;
        let x = &ens.x;
        let noise = self.cfg.gradient_noise;
        let (seed, step, first) = (self.cfg.seed, ens.step, ens.first_particle);
        self.grads.resize(ens.n * d, 0.0);
        exec::for_each_row_chunk(self.cfg.execution, &mut self.grads, d, CHUNK_ROWS, |start, block| {
            let rows = block.len() / d;
            let xs = &x[start * d..(start + rows) * d];
            if noise == GradientNoise::Exact {
                obj.grads_rows(xs, block);
                return;
            }
            for (r, (g, xr)) in block.chunks_exact_mut(d).zip(xs.chunks_exact(d)).enumerate() {
                let key = NoiseKey { seed, step, particle: first + (start + r) as u64 };
                obj.noisy_grad_into(xr, noise, key, g).expect("noise model validated at construction");
            }
        });
    }

    /// Advances the ensemble by one Euler step.
    pub fn step(&mut self, ens: &mut Ensemble) -> Result<StepInfo, DynamicsError> {
        self.check(ens)?;
        let (n, d) = (ens.n, ens.d);
        let k = ens.step;
        let eps = self.cfg.epsilon;
        let eta = self.cfg.eta.value(k);
        let sigma = self.cfg.sigma.value(k);
        let a = eta * eps;
        let b = sigma * eps.sqrt();

        self.compute_gradients(ens);

        self.noise.resize(n * d, 0.0);
        self.next.resize(n * d, 0.0);
        let prep = self.graph.prepare(&ens.z, d);
        let (graph, z, grads) = (self.graph, &ens.z, &self.grads);
        let (seed, first) = (self.cfg.seed, ens.first_particle);
        exec::for_each_row_pair(self.cfg.execution, &mut self.next, &mut self.noise, d, |i, out, xi| {
            if sigma != 0.0 {
                let mut r = rng::counter_rng(seed, Stream::Diffusion, k, first + i as u64);
                rng::fill_standard_normal(&mut r, xi);
            } else {
                xi.iter_mut().for_each(|v| *v = 0.0);
            }
            graph.drift_row(&prep, z, d, i, out);
            let zi = &z[i * d..(i + 1) * d];
            let gi = &grads[i * d..(i + 1) * d];
            for j in 0..d {
                out[j] = zi[j] - a * gi[j] + eps * out[j] + b * xi[j];
            }
        });

        if let Some(pos) = self.next.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::Divergence { step: k, particle: pos / d, max_abs: ens.max_abs() });
        }
        std::mem::swap(&mut ens.z, &mut self.next);
        let map = self.map;
        let zs = &ens.z;
        exec::for_each_row_chunk(self.cfg.execution, &mut ens.x, d, CHUNK_ROWS, |start, block| {
            for (r, xr) in block.chunks_exact_mut(d).enumerate() {
                let i = start + r;
                map.grad_conjugate_into(&zs[i * d..(i + 1) * d], xr);
            }
        });
        ens.step += 1;
        ens.time = ens.step as f64 * eps;
        if self.large_state_step.is_none() && ens.max_abs() > SOFT_DIVERGENCE {
            self.large_state_step = Some(ens.step);
        }
        Ok(StepInfo { k, eta, sigma })
    }

    /// Runs `n_steps` steps, calling `observe` on the initial state and then
    /// after every `stride`-th step (and after the last one).
    pub fn run_with(&mut self, ens: &mut Ensemble, stride: u64, mut observe: impl FnMut(&Ensemble, &StepInfo)) -> Result<(), DynamicsError> {
        self.check(ens)?;
        let stride = stride.max(1);
        let info0 = StepInfo { k: ens.step, eta: self.cfg.eta.value(ens.step), sigma: self.cfg.sigma.value(ens.step) };
        observe(ens, &info0);
        let end = ens.step + self.cfg.n_steps;
        while ens.step < end {
            let info = self.step(ens)?;
            if ens.step % stride == 0 || ens.step == end {
                observe(ens, &info);
            }
        }
        Ok(())
    }

    /// Runs and records a [`RunTrace`]. On divergence the trace up to the
    /// failure is returned alongside the error.
    pub fn run(&mut self, ens: &mut Ensemble, stride: u64, f_star: f64) -> Result<RunTrace, (DynamicsError, RunTrace)> {
        let mut rec = TraceRecorder::new(self.obj, self.map, f_star);
        let mut trace = RunTrace::new(ens.n, f_star);
        let res = self.run_with(ens, stride, |e, info| {
            trace.rows.push(rec.row(e.step, e.time, info.eta, info.sigma, &e.z, &e.x));
        });
        match res {
            Ok(()) => Ok(trace),
            Err(e) => Err((e, trace)),
        }
    }
}

/// One noiseless step computed two ways for the entropy map: the mirror
/// update, and the primal proximal step
/// `argmin_x {η ε ∇f(xᵢ)ᵀx + Σⱼ wᵢⱼ KL(x‖xⱼ)}` with `w = εθA + (1 − εθ)I`,
/// whose solution is `xᵢ' ∝ exp(−ηε∇f(xᵢ)) Πⱼ xⱼ^{wᵢⱼ}`. Returns the largest
/// coordinate discrepancy.
pub fn bregman_consensus_step_check(
    ens: &Ensemble,
    g: &InteractionGraph,
    obj: &dyn Objective,
    map: &MirrorMap,
    eta: f64,
    epsilon: f64,
) -> Result<f64, DynamicsError> {
    if map.kind() != MapKind::Entropy {
        return Err(DynamicsError::Config("the proximal form is closed-form only for the entropy map".into()));
    }
    let cfg = IntegratorConfig {
        execution: Execution::Sequential,
        ..IntegratorConfig::new(epsilon, Schedule::constant(eta), Schedule::constant(0.0), 1, 0)
    };
    let mut stepped = ens.clone();
    Integrator::new(obj, map, g, cfg)?.step(&mut stepped)?;

    let (n, d) = (ens.n, ens.d);
    let scale = map.mu();
    let w = g.weights() * (epsilon * g.theta());
    let mut worst = 0.0f64;
    let mut logits = vec![0.0; d];
    let mut prox = vec![0.0; d];
    for i in 0..n {
        let grad = obj.grad(ens.primal_row(i));
        for (l, gi) in logits.iter_mut().zip(&grad) {
            *l = -eta * epsilon * gi / scale;
        }
        for j in 0..n {
            let wij = w[(i, j)] + if i == j { 1.0 - epsilon * g.theta() } else { 0.0 };
            if wij == 0.0 {
                continue;
            }
            for (l, xj) in logits.iter_mut().zip(ens.primal_row(j)) {
                *l += wij * xj.ln();
            }
        }
        crate::mirror::softmax_into(&logits, 1.0, &mut prox);
        for (a, b) in prox.iter().zip(stepped.primal_row(i)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Projected (stochastic) gradient descent on the simplex from the
/// barycenter, `x ← Π(x − η(k)ε∇f(x) + σ(k)√ε ξ)`, the Euclidean baseline
/// for mirror descent. Returns `f(x_k)` for `k = 0..=n_steps`.
pub fn projected_gradient_descent(
    obj: &dyn Objective,
    eta: Schedule,
    sigma: Schedule,
    epsilon: f64,
    n_steps: u64,
    seed: u64,
) -> Vec<f64> {
    let d = obj.dim();
    let mut x = vec![1.0 / d as f64; d];
    let mut g = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut values = Vec::with_capacity(n_steps as usize + 1);
    values.push(obj.value(&x));
    for k in 0..n_steps {
        obj.grad_into(&x, &mut g);
        let a = eta.value(k) * epsilon;
        let b = sigma.value(k) * epsilon.sqrt();
        if b != 0.0 {
            rng::fill_standard_normal(&mut rng::counter_rng(seed, Stream::Diffusion, k, 0), &mut xi);
        }
        for j in 0..d {
            step[j] = x[j] - a * g[j] + if b != 0.0 { b * xi[j] } else { 0.0 };
        }
        crate::oracle::project_simplex(&step, &mut x);
        values.push(obj.value(&x));
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{LeastSquaresProblem, QuadraticObjective};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn quad() -> QuadraticObjective {
        QuadraticObjective::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DVector::from_vec(vec![0.3, -0.2])).unwrap()
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::constant(0.3).value(1000), 0.3);
        assert_relative_eq!(Schedule::InverseSqrt { base: 0.3 }.value(3), 0.15);
        assert_relative_eq!(Schedule::PowerDecay { base: 0.05, exponent: 0.1 }.value(0), 0.05);
        assert!(Schedule::PowerDecay { base: 1.0, exponent: -1.0 }.validate("s").is_err());
    }

    #[test]
    fn single_particle_gradient_descent_step() {
        let f = quad();
        let map = MirrorMap::euclidean(2);
        let g = InteractionGraph::mean_field(1).unwrap();
        let cfg = IntegratorConfig::new(0.1, Schedule::constant(0.5), Schedule::constant(0.0), 1, 0);
        let mut ens = Ensemble::from_mirror(&map, vec![1.0, -1.0], 1).unwrap();
        let grad = f.grad(&[1.0, -1.0]);
        Integrator::new(&f, &map, &g, cfg).unwrap().step(&mut ens).unwrap();
        assert_eq!(ens.mirror(), &[1.0 - 0.05 * grad[0], -1.0 - 0.05 * grad[1]]);
        assert_eq!(ens.primal(), ens.mirror());
    }

    #[test]
    fn two_particle_affine_map() {
        // z' = z − ηε(Qzᵢ − c) + εθ(z̄ − zᵢ) for both particles stacked.
        let f = quad();
        let map = MirrorMap::euclidean(2);
        let g = InteractionGraph::mean_field(2).unwrap().with_theta(1.5).unwrap();
        let (eta, eps) = (0.7, 0.2);
        let cfg = IntegratorConfig::new(eps, Schedule::constant(eta), Schedule::constant(0.0), 1, 0);
        let z0 = vec![0.4, -0.1, -0.3, 0.8];
        let mut ens = Ensemble::from_mirror(&map, z0.clone(), 2).unwrap();
        Integrator::new(&f, &map, &g, cfg).unwrap().step(&mut ens).unwrap();

        let q = f.hessian();
        let l = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        let m = DMatrix::<f64>::identity(4, 4)
            - DMatrix::from_fn(4, 4, |r, c| if r / 2 == c / 2 { eta * eps * q[(r % 2, c % 2)] } else { 0.0 })
            - DMatrix::from_fn(4, 4, |r, c| if r % 2 == c % 2 { eps * 1.5 * l[(r / 2, c / 2)] } else { 0.0 });
        let shift = DVector::from_fn(4, |r, _| eta * eps * f.linear_term()[r % 2]);
        let expect = &m * DVector::from_vec(z0) + shift;
        for (a, b) in ens.mirror().iter().zip(expect.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn consensus_is_preserved_without_noise() {
        let p = LeastSquaresProblem::generate(20, 6, 10.0, 3).unwrap();
        let map = MirrorMap::entropy(6);
        let g = InteractionGraph::erdos_renyi(5, 0.5, 2).unwrap();
        let cfg = IntegratorConfig::new(0.1, Schedule::constant(1.0), Schedule::constant(0.0), 50, 1);
        let row = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let mut ens = Ensemble::from_mirror(&map, row.repeat(5), 5).unwrap();
        let mut it = Integrator::new(&p, &map, &g, cfg).unwrap();
        for _ in 0..50 {
            it.step(&mut ens).unwrap();
            assert_eq!(crate::metrics::fluctuation_stats(ens.mirror(), 6).mean_sq, 0.0);
        }
    }

    #[test]
    fn particle_mean_identity() {
        let p = LeastSquaresProblem::generate(30, 5, 10.0, 1).unwrap();
        let map = MirrorMap::entropy(5);
        let g = InteractionGraph::erdos_renyi(7, 0.4, 5).unwrap().with_theta(2.0).unwrap();
        let mut cfg = IntegratorConfig::new(0.1, Schedule::constant(0.8), Schedule::constant(0.3), 40, 9);
        cfg.gradient_noise = GradientNoise::MiniBatch { batch_size: 4 };
        let mut ens = Ensemble::initialize(&map, 7, Init::Gaussian { scale: 1.0 }, 9).unwrap();
        let mut it = Integrator::new(&p, &map, &g, cfg).unwrap();
        for _ in 0..40 {
            let before = ens.mirror_mean();
            let info = it.step(&mut ens).unwrap();
            let after = ens.mirror_mean();
            let gbar = crate::metrics::row_mean(it.last_gradients(), 5);
            let xibar = crate::metrics::row_mean(it.last_noise(), 5);
            for j in 0..5 {
                let predicted = -info.eta * 0.1 * gbar[j] + info.sigma * 0.1f64.sqrt() * xibar[j];
                assert!((after[j] - before[j] - predicted).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn execution_modes_are_bitwise_identical() {
        let p = LeastSquaresProblem::generate(40, 30, 20.0, 4).unwrap();
        let map = MirrorMap::entropy(30);
        let g = InteractionGraph::mean_field(40).unwrap();
        let run = |execution| {
            let cfg = IntegratorConfig { execution, ..IntegratorConfig::new(0.1, Schedule::constant(0.5), Schedule::constant(0.05), 30, 2) };
            let mut ens = Ensemble::initialize(&map, 40, Init::Zeros, 2).unwrap();
            Integrator::new(&p, &map, &g, cfg).unwrap().run(&mut ens, 1, 0.0).unwrap()
        };
        assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    }

    #[test]
    fn divergence_reports_step() {
        let f = QuadraticObjective::new(DMatrix::identity(1, 1) * 1e3, DVector::zeros(1)).unwrap();
        let map = MirrorMap::euclidean(1);
        let g = InteractionGraph::mean_field(1).unwrap();
        let cfg = IntegratorConfig::new(1.0, Schedule::constant(10.0), Schedule::constant(0.0), 10_000, 0);
        let mut ens = Ensemble::from_mirror(&map, vec![1.0], 1).unwrap();
        let (err, trace) = Integrator::new(&f, &map, &g, cfg).unwrap().run(&mut ens, 1, 0.0).unwrap_err();
        assert!(matches!(err, DynamicsError::Divergence { particle: 0, .. }), "{err}");
        assert!(!trace.rows.is_empty());
    }

    #[test]
    fn bregman_check_single_particle_and_fixed_point() {
        let p = LeastSquaresProblem::generate(12, 4, 5.0, 8).unwrap();
        let map = MirrorMap::entropy(4);
        let g = InteractionGraph::mean_field(1).unwrap();
        let ens = Ensemble::initialize(&map, 1, Init::Gaussian { scale: 1.0 }, 3).unwrap();
        assert!(bregman_consensus_step_check(&ens, &g, &p, &map, 0.5, 1.0).unwrap() < 1e-10);
        assert!(bregman_consensus_step_check(&ens, &g, &p, &MirrorMap::euclidean(4), 0.5, 1.0).is_err());
    }

    #[test]
    fn projected_gd_fixed_point_and_reproducibility() {
        let f = QuadraticObjective::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let quiet = projected_gradient_descent(&f, Schedule::constant(1.0), Schedule::constant(0.0), 0.1, 20, 0);
        assert_eq!(quiet.len(), 21);
        assert!(quiet.iter().all(|v| (v - quiet[0]).abs() < 1e-15));
        let noisy = |seed| projected_gradient_descent(&f, Schedule::constant(1.0), Schedule::constant(0.3), 0.1, 20, seed);
        assert_eq!(noisy(4), noisy(4));
        assert_ne!(noisy(4), noisy(5));
    }
}
