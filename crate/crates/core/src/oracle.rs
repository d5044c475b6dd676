//! Ground truth independent of the integrator: certified simplex minimizers
//! and exact stationary laws of linear-Gaussian particle systems.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::InteractionGraph;
use crate::objective::{frank_wolfe_gap, Objective, QuadraticObjective};

pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("certification failed: Frank–Wolfe gap {gap:e} above tolerance {tol:e} after {iterations} iterations")]
    NotCertified { iterations: usize, gap: f64, tol: f64 },
    #[error("invalid tolerance {0}")]
    Tolerance(f64),
    #[error("drift matrix is singular: smallest eigenvalue {0:e}")]
    Singular(f64),
    #[error("Lyapunov residual {0:e} exceeds 1e-10")]
    Residual(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `f* ∈ [f(x*) − fw_gap, f(x*)]` by convexity on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerCertificate {
    pub objective: String,
    pub dim: usize,
    pub x_star: Vec<f64>,
    /// `f(x*) − fw_gap`, a certified lower bound on the minimum.
    pub f_star: f64,
    pub f_at_x_star: f64,
    pub fw_gap: f64,
    pub tolerance: f64,
    pub iterations: usize,
}

impl MinimizerCertificate {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OracleError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64], out: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        }
    }
    for (o, &vi) in out.iter_mut().zip(v) {
        *o = (vi - tau).max(0.0);
    }
}

/// Accelerated projected gradient with backtracking and adaptive restart,
/// stopped once the Frank–Wolfe gap at the iterate is at most `tol`.
pub fn certify_minimizer(obj: &dyn Objective, tol: f64, max_iter: usize) -> Result<MinimizerCertificate, OracleError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(OracleError::Tolerance(tol));
    }
    let d = obj.dim();
    let mut x = vec![1.0 / d as f64; d];
    let mut gx = obj.grad(&x);
    let mut fx = obj.value(&x);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut fy = fx;
    let mut lip = 1.0;
    let mut t = 1.0f64;
    let mut trial = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut gap = frank_wolfe_gap(&gx, &x);
    for it in 0..max_iter {
        if gap <= tol {
            return Ok(certificate(obj, x, fx, gap, tol, it));
        }
        // Backtracking on the quadratic upper model at y.
        let (x_new, f_new) = loop {
            for j in 0..d {
                step[j] = y[j] - gy[j] / lip;
            }
            project_simplex(&step, &mut trial);
            let f_trial = obj.value(&trial);
            let mut model = fy;
            for j in 0..d {
                let dj = trial[j] - y[j];
                model += gy[j] * dj + 0.5 * lip * dj * dj;
            }
            if f_trial <= model + 1e-15 * fy.abs().max(1.0) || lip > 1e300 {
                break (trial.clone(), f_trial);
            }
            lip *= 2.0;
        };
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let restart = f_new > fx;
        let momentum = if restart { 0.0 } else { (t - 1.0) / t_new };
        for j in 0..d {
            y[j] = x_new[j] + momentum * (x_new[j] - x[j]);
        }
        t = if restart { 1.0 } else { t_new };
        x = x_new;
        fx = f_new;
        obj.grad_into(&x, &mut gx);
        gap = frank_wolfe_gap(&gx, &x);
        if restart {
            y.copy_from_slice(&x);
        }
        obj.grad_into(&y, &mut gy);
        fy = obj.value(&y);
        lip *= 0.9;
    }
    Err(OracleError::NotCertified { iterations: max_iter, gap, tol })
}

fn certificate(obj: &dyn Objective, x: Vec<f64>, fx: f64, gap: f64, tol: f64, iterations: usize) -> MinimizerCertificate {
    MinimizerCertificate {
        objective: obj.name().to_string(),
        dim: obj.dim(),
        f_star: fx - gap,
        f_at_x_star: fx,
        x_star: x,
        fw_gap: gap,
        tolerance: tol,
        iterations,
    }
}

/// Stationary law of `dz = −(η∇f(z) + θ(L⊗I)z)dt + σ dB` for quadratic `f`
/// with the unit quadratic mirror map. States are stacked particle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OuStationary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `‖MΣ + ΣM − σ²I‖_F`.
    pub residual: f64,
    pub drift: DMatrix<f64>,
    pub n_particles: usize,
}

impl OuStationary {
    /// The covariance as nested rows.
    pub fn covariance_rows(&self) -> Vec<Vec<f64>> {
        self.covariance.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Mean over particles of `E‖z̃ᵢ‖²` under the stationary law.
    pub fn mean_square_fluctuation(&self) -> f64 {
        let nd = self.mean.len();
        let n = self.n_particles;
        let d = nd / n;
        // z̃ = (I − (1/N)11ᵀ ⊗ I) z.
        let p = DMatrix::from_fn(nd, nd, |r, c| {
            let same = if r % d == c % d { 1.0 / n as f64 } else { 0.0 };
            if r == c { 1.0 - same } else { -same }
        });
        let mu = &p * &self.mean;
        ((&p * &self.covariance * p.transpose()).trace() + mu.norm_squared()) / n as f64
    }
}

/// `M = η·(I_N ⊗ Q) + θ·(L ⊗ I_d)`, mean `M⁻¹ η (1 ⊗ c)`, and `Σ` solving
/// `MΣ + ΣM = σ²I` in the eigenbasis of the symmetric `M`.
pub fn ou_stationary(q: &QuadraticObjective, g: &InteractionGraph, sigma: f64, eta: f64) -> Result<OuStationary, OracleError> {
    let d = q.hessian().nrows();
    let n = g.n_particles();
    let nd = n * d;
    let lap = g.laplacian() * g.theta();
    let m = DMatrix::from_fn(nd, nd, |r, c| {
        let (i, a) = (r / d, r % d);
        let (j, b) = (c / d, c % d);
        let mut v = 0.0;
        if i == j {
            v += eta * q.hessian()[(a, b)];
        }
        if a == b {
            v += lap[(i, j)];
        }
        v
    });
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m.clone());
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(lmin > 1e-12 * lmax.max(1.0)) {
        return Err(OracleError::Singular(lmin));
    }
    let u = &eig.eigenvectors;
    let rhs = u.transpose() * (DMatrix::<f64>::identity(nd, nd) * (sigma * sigma)) * u;
    let lam = &eig.eigenvalues;
    let tilde = DMatrix::from_fn(nd, nd, |a, b| rhs[(a, b)] / (lam[a] + lam[b]));
    let cov = u * tilde * u.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    let residual = (&m * &cov + &cov * &m - DMatrix::<f64>::identity(nd, nd) * (sigma * sigma)).norm();
    if residual > 1e-10 {
        return Err(OracleError::Residual(residual));
    }
    let forcing = DVector::from_fn(nd, |r, _| eta * q.linear_term()[r % d]);
    let mean = u * DVector::from_fn(nd, |a, _| (u.column(a).dot(&forcing)) / lam[a]);
    Ok(OuStationary { mean, covariance: cov, residual, drift: m, n_particles: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::LeastSquaresProblem;
    use approx::assert_relative_eq;

    #[test]
    fn projection_examples() {
        let mut out = [0.0; 3];
        project_simplex(&[0.2, 0.3, 0.5], &mut out);
        assert_eq!(out, [0.2, 0.3, 0.5]);
        project_simplex(&[2.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
        project_simplex(&[1.0, 1.0, 1.0], &mut out);
        assert_relative_eq!(out[0], 1.0 / 3.0, epsilon = 1e-16);
    }

    #[test]
    fn linear_vertex_solution() {
        let f = QuadraticObjective::linear(&[1.0, 2.0]);
        let c = certify_minimizer(&f, 1e-12, 1000).unwrap();
        assert_eq!(c.x_star, vec![1.0, 0.0]);
        assert_eq!(c.f_star, 1.0);
        assert_eq!(c.fw_gap, 0.0);
    }

    #[test]
    fn identity_design_barycenter() {
        let p = LeastSquaresProblem::from_matrix(DMatrix::identity(4, 4), vec![0.0; 4]).unwrap();
        let c = certify_minimizer(&p, 1e-12, 1000).unwrap();
        assert_relative_eq!(c.f_star, 1.0 / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn ill_conditioned_certificate() {
        let p = LeastSquaresProblem::generate(100, 100, 100.0, 1).unwrap();
        let c = certify_minimizer(&p, 1e-10, DEFAULT_MAX_ITER).unwrap();
        assert!(c.fw_gap <= 1e-10);
        assert_relative_eq!(c.x_star.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(c.x_star.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn iteration_cap_reports_gap() {
        let p = LeastSquaresProblem::generate(50, 50, 100.0, 2).unwrap();
        let err = certify_minimizer(&p, 1e-14, 3).unwrap_err();
        assert!(matches!(err, OracleError::NotCertified { iterations: 3, .. }));
    }

    #[test]
    fn scalar_ou_variance() {
        let q = QuadraticObjective::new(DMatrix::from_element(1, 1, 3.0), DVector::from_element(1, 1.5)).unwrap();
        let g = InteractionGraph::mean_field(1).unwrap();
        let ou = ou_stationary(&q, &g, 0.4, 2.0).unwrap();
        assert_relative_eq!(ou.covariance[(0, 0)], 0.16 / (2.0 * 2.0 * 3.0), epsilon = 1e-15);
        assert_relative_eq!(ou.mean[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_particle_fluctuation_mode() {
        // Fluctuation coordinate (z¹ − z²)/√2 has rate ηq + θ.
        let (q0, eta, theta, sigma) = (2.0, 0.5, 1.5, 0.3);
        let q = QuadraticObjective::new(DMatrix::from_element(1, 1, q0), DVector::zeros(1)).unwrap();
        let g = InteractionGraph::mean_field(2).unwrap().with_theta(theta).unwrap();
        let ou = ou_stationary(&q, &g, sigma, eta).unwrap();
        let var_diff = ou.covariance[(0, 0)] + ou.covariance[(1, 1)] - 2.0 * ou.covariance[(0, 1)];
        assert_relative_eq!(var_diff / 2.0, sigma * sigma / (2.0 * (eta * q0 + theta)), epsilon = 1e-14);
        assert_relative_eq!(ou.mean_square_fluctuation(), sigma * sigma / (2.0 * (eta * q0 + theta)) * 0.5, epsilon = 1e-14);
        assert!(ou.residual <= 1e-10);
    }

    #[test]
    fn singular_drift_rejected() {
        let q = QuadraticObjective::new(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let g = InteractionGraph::mean_field(3).unwrap();
        assert!(matches!(ou_stationary(&q, &g, 1.0, 1.0), Err(OracleError::Singular(_))));
    }
}
