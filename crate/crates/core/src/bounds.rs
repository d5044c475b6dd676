//! Closed-form bound calculators and the stacked potential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::InteractionGraph;
use crate::mirror::MirrorMap;
use crate::objective::Objective;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("bound is vacuous: {0}")]
    Vacuous(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Constants entering the bounds. `lambda_min` is the unscaled algebraic
/// connectivity; it is multiplied by `theta` wherever it appears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub mu_phi: f64,
    pub mu_f: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    pub n_particles: usize,
    pub dim: usize,
    pub sigma: f64,
    pub horizon: f64,
    pub diameter: f64,
    pub theta: f64,
    /// Spectral norm of `θ𝓛`.
    pub laplacian_norm: f64,
    /// `sup ΔΦ*`.
    pub conjugate_laplacian: f64,
}

impl BoundInputs {
    /// Fills every constant derivable from the run's objects; `kappa` and
    /// `mu_f` are left to the caller.
    pub fn from_parts(obj: &dyn Objective, map: &MirrorMap, g: &InteractionGraph, sigma: f64, horizon: f64) -> Self {
        Self {
            lipschitz: obj.lipschitz(),
            mu_phi: map.mu(),
            mu_f: 0.0,
            kappa: 0.0,
            lambda_min: g.lambda_min_unscaled(),
            n_particles: g.n_particles(),
            dim: obj.dim(),
            sigma,
            horizon,
            diameter: map.diameter().unwrap_or(f64::INFINITY),
            theta: g.theta(),
            laplacian_norm: g.laplacian_norm(),
            conjugate_laplacian: map.laplacian_conjugate_bound(),
        }
    }

    /// `κ + θλ̲`.
    pub fn fluctuation_rate(&self) -> f64 {
        self.kappa + self.theta * self.lambda_min
    }
}

/// `D²/(2T) + σ² sup ΔΦ* / 2`.
pub fn smd_convex_bound(inp: &BoundInputs) -> Result<f64, BoundError> {
    if !(inp.horizon > 0.0) {
        return Err(BoundError::Invalid(format!("horizon must be positive, got {}", inp.horizon)));
    }
    Ok(inp.diameter * inp.diameter / (2.0 * inp.horizon) + 0.5 * inp.sigma * inp.sigma * inp.conjugate_laplacian)
}

/// Bound on `E[(1/N) Σ ‖z̃ᵢ(t)‖²]` with `c = κ + θλ̲`:
/// `(1/N) e^{−ct} F₀ + (dσ²/c)((N−1)/N)(1 − e^{−ct})`, `F₀ = Σ ‖z̃ᵢ(0)‖²`.
pub fn fluctuation_bound(inp: &BoundInputs, t: f64, initial_fluct_sq: f64) -> Result<f64, BoundError> {
    let c = inp.fluctuation_rate();
    if !(c > 0.0) {
        return Err(BoundError::Vacuous("κ + θλ̲ = 0 (convex objective without interaction)"));
    }
    let n = inp.n_particles as f64;
    let decay = (-c * t).exp();
    Ok(decay * initial_fluct_sq / n + inp.dim as f64 * inp.sigma * inp.sigma / c * (n - 1.0) / n * (-(-c * t).exp_m1()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSobolev {
    pub rho: f64,
    pub c_t: f64,
}

/// `ρ = σ²κ/2`, `C_t = (2/ρ)(1 − e^{−ρt}) + C₀ e^{−ρt}` (`2t + C₀` at `ρ = 0`).
pub fn log_sobolev_constants(inp: &BoundInputs, t: f64, c0: f64) -> Result<LogSobolev, BoundError> {
    if inp.kappa < 0.0 {
        return Err(BoundError::Invalid(format!("kappa must be non-negative, got {}", inp.kappa)));
    }
    let rho = 0.5 * inp.sigma * inp.sigma * inp.kappa;
    let c_t = if rho * t < 1e-300 {
        2.0 * t + c0
    } else {
        // (1 − e^{−ρt})/ρ, accurate for small ρt.
        2.0 * (-(-rho * t).exp_m1()) / rho + c0 * (-rho * t).exp()
    };
    Ok(LogSobolev { rho, c_t })
}

/// `(σ²/2)(2dN/ρ − ½ log(σ²/(2L_N)))` with `L_N = L/μ + ‖θ𝓛‖`.
pub fn mean_mode_gap_bound(inp: &BoundInputs) -> Result<f64, BoundError> {
    let rho = 0.5 * inp.sigma * inp.sigma * inp.kappa;
    if !(rho > 0.0) {
        return Err(BoundError::Vacuous("ρ = σ²κ/2 is zero"));
    }
    let l_n = inp.lipschitz / inp.mu_phi + inp.laplacian_norm;
    if !(l_n > 0.0) {
        return Err(BoundError::Invalid(format!("L_N must be positive, got {l_n}")));
    }
    let s2 = inp.sigma * inp.sigma;
    let dn = (inp.dim * inp.n_particles) as f64;
    Ok(0.5 * s2 * (2.0 * dn / rho - 0.5 * (s2 / (2.0 * l_n)).ln()))
}

/// Value and gradient of `𝒲(Z) = Σᵢ f(∇Φ*(zᵢ)) + ½ θ Σᵢ zᵢᵀ(LZ)ᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedPotential {
    pub value: f64,
    /// Row-major `N × d`.
    pub gradient: Vec<f64>,
}

impl StackedPotential {
    pub fn max_abs_gradient(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rows of the gradient are `∂_z f(∇Φ*(zᵢ)) + θ(LZ)ᵢ`. The first term is
/// `∇f(xᵢ)` for the unit quadratic map; for entropy it is the pullback
/// `xᵢ∘(∇f(xᵢ) − ⟨xᵢ, ∇f(xᵢ)⟩1)`, which vanishes at simplex minimizers on
/// the boundary as well as in the interior.
pub fn stacked_potential(obj: &dyn Objective, map: &MirrorMap, g: &InteractionGraph, z: &[f64]) -> Result<StackedPotential, BoundError> {
    let d = obj.dim();
    let n = g.n_particles();
    if map.dim() != d || z.len() != n * d {
        return Err(BoundError::Invalid(format!("expected a {n}×{d} state, got {} values", z.len())));
    }
    let drift = g.interaction_drift(z, d).map_err(|e| BoundError::Invalid(e.to_string()))?;
    let mut grad = vec![0.0; n * d];
    let mut value = 0.0;
    let mut x = vec![0.0; d];
    let mut gf = vec![0.0; d];
    for i in 0..n {
        let zi = &z[i * d..(i + 1) * d];
        map.grad_conjugate_into(zi, &mut x);
        obj.grad_into(&x, &mut gf);
        value += obj.value(&x);
        let row = &mut grad[i * d..(i + 1) * d];
        map.pullback_into(&x, &gf, row);
        for ((o, dr), zv) in row.iter_mut().zip(&drift[i * d..(i + 1) * d]).zip(zi) {
            // drift = −θ(LZ)ᵢ
            *o -= dr;
            value -= 0.5 * zv * dr;
        }
    }
    Ok(StackedPotential { value, gradient: grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::QuadraticObjective;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn inputs() -> BoundInputs {
        BoundInputs {
            lipschitz: 1.0,
            mu_phi: 1.0,
            mu_f: 0.0,
            kappa: 1.0,
            lambda_min: 1.0,
            n_particles: 4,
            dim: 2,
            sigma: 0.05,
            horizon: 10.0,
            diameter: 1.0,
            theta: 1.0,
            laplacian_norm: 1.0,
            conjugate_laplacian: 1.0,
        }
    }

    #[test]
    fn smd_examples() {
        let mut b = inputs();
        b.sigma = 0.0;
        assert_relative_eq!(smd_convex_bound(&b).unwrap(), 0.05);
        b.sigma = 0.05;
        b.horizon = 1e300;
        assert_relative_eq!(smd_convex_bound(&b).unwrap(), 0.5 * 0.0025);
        b.horizon = 0.0;
        assert!(smd_convex_bound(&b).is_err());
    }

    #[test]
    fn smd_entropy_plug_in() {
        let map = MirrorMap::entropy(4);
        let mut b = inputs();
        b.diameter = map.diameter().unwrap();
        b.conjugate_laplacian = map.laplacian_conjugate_bound();
        b.horizon = 200.0;
        // 2 log 4 / 400 + 0.0025/2
        assert_relative_eq!(smd_convex_bound(&b).unwrap(), 2.0 * 4f64.ln() / 400.0 + 0.00125, epsilon = 1e-16);
    }

    #[test]
    fn fluctuation_limits() {
        let mut b = inputs();
        assert_eq!(fluctuation_bound(&b, 0.0, 0.0).unwrap(), 0.0);
        b.n_particles = 1_000_000_000;
        let lim = b.dim as f64 * b.sigma * b.sigma / 2.0;
        assert_relative_eq!(fluctuation_bound(&b, 1e3, 5.0).unwrap(), lim, max_relative = 1e-8);
        b.kappa = 0.0;
        b.lambda_min = 0.0;
        assert!(matches!(fluctuation_bound(&b, 1.0, 1.0), Err(BoundError::Vacuous(_))));
    }

    #[test]
    fn fluctuation_monotonicity() {
        let b = inputs();
        let at = |f: &dyn Fn(&mut BoundInputs)| {
            let mut c = b.clone();
            f(&mut c);
            fluctuation_bound(&c, 3.0, 2.0).unwrap()
        };
        let base = at(&|_| {});
        assert!(at(&|c| c.theta = 2.0) < base);
        assert!(at(&|c| c.kappa = 2.0) < base);
        assert!(at(&|c| c.sigma = 0.1) > base);
    }

    #[test]
    fn log_sobolev_examples() {
        let mut b = inputs();
        b.kappa = 2.0;
        b.sigma = 1.0;
        let ls = log_sobolev_constants(&b, 1e4, 7.0).unwrap();
        assert_eq!(ls.rho, 1.0);
        assert_relative_eq!(ls.c_t, 2.0);
        assert_eq!(log_sobolev_constants(&b, 0.0, 7.0).unwrap().c_t, 7.0);
        b.kappa = 0.0;
        assert_eq!(log_sobolev_constants(&b, 3.0, 1.0).unwrap().c_t, 7.0);
        b.kappa = 2e-8;
        assert_relative_eq!(log_sobolev_constants(&b, 3.0, 1.0).unwrap().c_t, 7.0, max_relative = 1e-7);
    }

    #[test]
    fn mean_mode_examples() {
        let mut b = inputs();
        // L_N = 2; σ² = 2 L_N zeroes the log term.
        b.sigma = 2.0;
        let rho = 0.5 * 4.0;
        assert_relative_eq!(mean_mode_gap_bound(&b).unwrap(), 4.0 * 8.0 / rho);
        b.sigma = 0.05;
        let one = mean_mode_gap_bound(&b).unwrap();
        let rho = 0.5 * 0.0025;
        assert_relative_eq!(one, 0.00125 * (16.0 / rho - 0.5 * (0.0025f64 / 4.0).ln()), max_relative = 1e-14);
        b.kappa = 0.0;
        assert!(mean_mode_gap_bound(&b).is_err());
    }

    #[test]
    fn quadratic_two_particle_gradient() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_vec(vec![0.3, -0.2]);
        let f = QuadraticObjective::new(q.clone(), c.clone()).unwrap();
        let map = MirrorMap::euclidean(2);
        let g = InteractionGraph::mean_field(2).unwrap();
        let z = [0.4, -0.1, -0.3, 0.8];
        let w = stacked_potential(&f, &map, &g, &z).unwrap();
        // (blockdiag(Q) + L⊗I) z − 1⊗c with L = [[½, −½], [−½, ½]]
        let zv = DVector::from_row_slice(&z);
        let big = DMatrix::from_fn(4, 4, |r, col| {
            let blk = if r / 2 == col / 2 { q[(r % 2, col % 2)] } else { 0.0 };
            let lap = if r % 2 == col % 2 { if r / 2 == col / 2 { 0.5 } else { -0.5 } } else { 0.0 };
            blk + lap
        });
        let expect = &big * &zv - DVector::from_fn(4, |r, _| c[r % 2]);
        for (a, b) in w.gradient.iter().zip(expect.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let lap_only = DMatrix::from_fn(4, 4, |r, col| big[(r, col)] - if r / 2 == col / 2 { q[(r % 2, col % 2)] } else { 0.0 });
        let expect_value = f.value(&z[..2]) + f.value(&z[2..]) + 0.5 * zv.dot(&(&lap_only * &zv));
        assert_relative_eq!(w.value, expect_value, epsilon = 1e-15);
    }

    #[test]
    fn independent_graph_decouples() {
        let f = QuadraticObjective::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let map = MirrorMap::euclidean(2);
        let g = InteractionGraph::independent(2).unwrap();
        let w = stacked_potential(&f, &map, &g, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(w.gradient, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
