use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Objective, ObjectiveError};

/// `f(x) = ½ xᵀQx − cᵀx` with symmetric `Q ⪰ 0`. With `Q = 0` this is the
/// linear objective `(−c)ᵀx`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    c: DVector<f64>,
    eig_min: f64,
    eig_max: f64,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, ObjectiveError> {
        let d = c.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(ObjectiveError::Dimension { expected: d, got: q.nrows() });
        }
        for i in 0..d {
            for j in 0..d {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * (1.0 + q[(i, j)].abs()) {
                    return Err(ObjectiveError::InvalidParameter(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let eig_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let eig_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if eig_min < -1e-12 {
            return Err(ObjectiveError::InvalidParameter(format!("Q has negative eigenvalue {eig_min}")));
        }
        Ok(Self { q, c, eig_min: eig_min.max(0.0), eig_max })
    }

    /// `f(x) = costsᵀx`.
    pub fn linear(costs: &[f64]) -> Self {
        let d = costs.len();
        Self::new(DMatrix::zeros(d, d), DVector::from_iterator(d, costs.iter().map(|v| -v))).expect("zero Q is valid")
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig_min
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig_max
    }
}

impl Objective for QuadraticObjective {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut v = 0.0;
        for i in 0..d {
            let mut qi = 0.0;
            for j in 0..d {
                qi += self.q[(i, j)] * x[j];
            }
            v += x[i] * (0.5 * qi - self.c[i]);
        }
        v
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = -self.c[i];
            for j in 0..d {
                s += self.q[(i, j)] * x[j];
            }
            *o = s;
        }
    }

    /// Gradient Lipschitz constant `λ_max(Q)` plus `‖c‖` (the value at the origin); the
    /// domain is unbounded for the quadratic map, so this is only meaningful on bounded sets.
    fn lipschitz(&self) -> f64 {
        self.eig_max + self.c.norm()
    }

    fn strong_convexity(&self) -> f64 {
        self.eig_min
    }
}
