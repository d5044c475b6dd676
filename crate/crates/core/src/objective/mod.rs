//! Benchmark objectives and their exact and stochastic gradient oracles.

mod least_squares;
mod quadratic;
mod traffic;

pub use least_squares::{LeastSquaresProblem, Normalization};
pub use quadratic::QuadraticObjective;
pub use traffic::{TrafficProblem, TrafficTarget};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{noise:?} gradients are not available for {objective}")]
    Unsupported { noise: GradientNoise, objective: &'static str },
    #[error("traffic generation failed: no origin-destination path with at most r_max={r_max} edges (n={n}, r={radius}, seed={seed}) after {attempts} attempts")]
    NoPaths { n: usize, radius: f64, r_max: usize, seed: u64, attempts: u32 },
    #[error("traffic generation found more than {limit} paths; lower r_max or the radius")]
    TooManyPaths { limit: usize },
    #[error("could not tune the radius to reach {lo}..={hi} paths (n={n}, r_max={r_max})")]
    TargetUnreachable { n: usize, r_max: usize, lo: usize, hi: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing problem file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How a particle's gradient is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientNoise {
    #[default]
    Exact,
    /// Gradient of the average over `batch_size` summands sampled without
    /// replacement (finite-sum objectives only).
    MiniBatch { batch_size: usize },
    /// Gaussian perturbation of every edge cost (traffic only).
    EdgeNoise { sigma_g: f64 },
}

/// Identifies one stochastic gradient draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub step: u64,
    pub particle: u64,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(x, &mut g);
        g
    }

    /// Values for every row of a row-major `rows × d` buffer.
    fn values_rows(&self, xs: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (o, x) in out.iter_mut().zip(xs.chunks_exact(d)) {
            *o = self.value(x);
        }
    }

    /// Exact gradients for every row of a row-major `rows × d` buffer.
    fn grads_rows(&self, xs: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (o, x) in out.chunks_exact_mut(d).zip(xs.chunks_exact(d)) {
            self.grad_into(x, o);
        }
    }

    /// Upper bound on `‖∇f‖₂` over the primal domain.
    fn lipschitz(&self) -> f64;

    /// Strong-convexity constant of `f` in ‖·‖₂ (0 when merely convex).
    fn strong_convexity(&self) -> f64 {
        0.0
    }

    fn supports(&self, noise: GradientNoise) -> bool {
        matches!(noise, GradientNoise::Exact)
    }

    /// One stochastic gradient draw keyed by `(seed, step, particle)`.
    fn noisy_grad_into(&self, x: &[f64], noise: GradientNoise, key: NoiseKey, out: &mut [f64]) -> Result<(), ObjectiveError> {
        let _ = key;
        match noise {
            GradientNoise::Exact => {
                self.grad_into(x, out);
                Ok(())
            }
            other => Err(ObjectiveError::Unsupported { noise: other, objective: self.name() }),
        }
    }
}

/// Frank–Wolfe gap on the simplex: `∇f(x)ᵀx − minᵢ ∇f(x)ᵢ`.
pub fn frank_wolfe_gap(grad: &[f64], x: &[f64]) -> f64 {
    let inner: f64 = grad.iter().zip(x).map(|(g, v)| g * v).sum();
    let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
    inner - min
}
