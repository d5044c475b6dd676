use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{GradientNoise, NoiseKey, Objective, ObjectiveError};
use crate::rng::{self, Stream};

/// Rows per dense block; gradients are always evaluated on zero-padded
/// blocks of this height so a particle's result does not depend on how many
/// other particles share the call.
const BLOCK: usize = 16;

/// Whether the residual sum is averaged over rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `‖Wx − b‖²/m`.
    #[default]
    Mean,
    /// `‖Wx − b‖²`.
    Sum,
}

/// `f(x) = w Σᵢ (W_{i,·}x − bᵢ)²` with `w = 1/m` (mean) or `w = 1` (sum).
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    m: usize,
    normalization: Normalization,
    d: usize,
    /// Row-major `m × d`.
    w: Vec<f64>,
    b: Vec<f64>,
    s_max: f64,
    s_min: f64,
    seed: Option<u64>,
}

impl LeastSquaresProblem {
    /// `W = U·diag(s)·Vᵀ` with Haar-random orthonormal `U`, `V` (QR of Gaussian
    /// matrices), singular values geometrically spaced from 1 down to
    /// `1/cond`, and `b ~ N(0, I_m)`.
    pub fn generate(m: usize, d: usize, cond: f64, seed: u64) -> Result<Self, ObjectiveError> {
        Self::generate_scaled(m, d, cond, 1.0, seed)
    }

    /// As [`generate`](Self::generate) with the largest singular value set to
    /// `s_max` instead of 1.
    pub fn generate_scaled(m: usize, d: usize, cond: f64, s_max: f64, seed: u64) -> Result<Self, ObjectiveError> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(ObjectiveError::InvalidParameter(format!("s_max must be positive, got {s_max}")));
        }
        if m == 0 || d == 0 {
            return Err(ObjectiveError::InvalidParameter(format!("m and d must be positive (m={m}, d={d})")));
        }
        if !(cond >= 1.0 && cond.is_finite()) {
            return Err(ObjectiveError::InvalidParameter(format!("condition number must be >= 1, got {cond}")));
        }
        let mut rng = rng::seeded(seed, Stream::Problem);
        let r = m.min(d);
        let mut gauss = |rows: usize, cols: usize| {
            let mut buf = vec![0.0; rows * cols];
            rng::fill_standard_normal(&mut rng, &mut buf);
            DMatrix::from_vec(rows, cols, buf)
        };
        let u = gauss(m, r).qr().q();
        let v = gauss(d, r).qr().q();
        let singular: Vec<f64> = (0..r)
            .map(|k| if r == 1 { s_max } else { s_max * cond.powf(-(k as f64) / (r - 1) as f64) })
            .collect();
        let mut us = u;
        for (k, s) in singular.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        let w = us * v.transpose();
        let mut b = vec![0.0; m];
        rng::fill_standard_normal(&mut rng, &mut b);
        let s_min = *singular.last().unwrap();
        Ok(Self::from_parts(w, b, Some(seed), Some((s_max, s_min))))
    }

    /// Builds a problem from an explicit design matrix.
    pub fn from_matrix(w: DMatrix<f64>, b: Vec<f64>) -> Result<Self, ObjectiveError> {
        if w.nrows() != b.len() {
            return Err(ObjectiveError::Dimension { expected: w.nrows(), got: b.len() });
        }
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(ObjectiveError::InvalidParameter("empty design matrix".into()));
        }
        Ok(Self::from_parts(w, b, None, None))
    }

    fn from_parts(w: DMatrix<f64>, b: Vec<f64>, seed: Option<u64>, sv: Option<(f64, f64)>) -> Self {
        let (m, d) = w.shape();
        let (s_max, s_min) = sv.unwrap_or_else(|| {
            let s = w.clone().singular_values();
            let max = s.iter().copied().fold(0.0, f64::max);
            let min = if m >= d { s.iter().copied().fold(f64::INFINITY, f64::min) } else { 0.0 };
            (max, min)
        });
        let mut rows = vec![0.0; m * d];
        for i in 0..m {
            for j in 0..d {
                rows[i * d + j] = w[(i, j)];
            }
        }
        Self { m, normalization: Normalization::Mean, d, w: rows, b, s_max, s_min, seed }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn weight(&self) -> f64 {
        match self.normalization {
            Normalization::Mean => 1.0 / self.m as f64,
            Normalization::Sum => 1.0,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.d, &self.w)
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn singular_value_range(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    /// `κ(W) = s_max / s_min`.
    pub fn condition_number(&self) -> f64 {
        self.s_max / self.s_min
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    /// Residuals `R = X Wᵀ − 1bᵀ` for a padded block of `BLOCK` rows.
    fn residual_block(&self, xs: &[f64], resid: &mut [f64]) {
        let (m, d) = (self.m, self.d);
        debug_assert_eq!(xs.len(), BLOCK * d);
        for row in resid.chunks_exact_mut(m) {
            row.copy_from_slice(&self.b);
        }
        // SAFETY: all pointers address buffers of the stated shapes.
        unsafe {
            matrixmultiply::dgemm(
                BLOCK, d, m,
                1.0,
                xs.as_ptr(), d as isize, 1,
                self.w.as_ptr(), 1, d as isize,
                -1.0,
                resid.as_mut_ptr(), m as isize, 1,
            );
        }
    }

    fn with_blocks(&self, xs: &[f64], mut f: impl FnMut(usize, usize, &[f64])) {
        let (m, d) = (self.m, self.d);
        let rows = xs.len() / d;
        let mut xblock = vec![0.0; BLOCK * d];
        let mut resid = vec![0.0; BLOCK * m];
        let mut start = 0;
        while start < rows {
            let take = (rows - start).min(BLOCK);
            xblock[..take * d].copy_from_slice(&xs[start * d..(start + take) * d]);
            xblock[take * d..].iter_mut().for_each(|v| *v = 0.0);
            self.residual_block(&xblock, &mut resid);
            f(start, take, &resid);
            start += take;
        }
    }

    /// Mini-batch gradient `(2wm/S) Σ_{i∈S} W_iᵀ(W_i x − b_i)` with `S` drawn
    /// uniformly without replacement from the `(seed, step, particle)` cell.
    /// `S = m` is the full gradient.
    pub fn batch_grad_into(&self, x: &[f64], batch_size: usize, key: NoiseKey, out: &mut [f64]) -> Result<(), ObjectiveError> {
        if batch_size == 0 || batch_size > self.m {
            return Err(ObjectiveError::InvalidParameter(format!("batch size {batch_size} outside 1..={}", self.m)));
        }
        if batch_size == self.m {
            self.grad_into(x, out);
            return Ok(());
        }
        let mut rng = rng::counter_rng(key.seed, Stream::MiniBatch, key.step, key.particle);
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in index::sample(&mut rng, self.m, batch_size) {
            let wi = self.row(i);
            let r = dot(wi, x) - self.b[i];
            for (o, a) in out.iter_mut().zip(wi) {
                *o += r * a;
            }
        }
        let scale = 2.0 * self.weight() * self.m as f64 / batch_size as f64;
        out.iter_mut().for_each(|o| *o *= scale);
        Ok(())
    }

    pub fn batch_indices(&self, batch_size: usize, key: NoiseKey) -> Vec<usize> {
        let mut rng = rng::counter_rng(key.seed, Stream::MiniBatch, key.step, key.particle);
        index::sample(&mut rng, self.m, batch_size.min(self.m)).into_vec()
    }

    /// Writes `w0..w{d-1},b` rows.
    pub fn to_csv(&self) -> String {
        let mut s = (0..self.d).map(|j| format!("w{j}")).collect::<Vec<_>>().join(",");
        s.push_str(",b\n");
        for i in 0..self.m {
            let mut row: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.b[i]));
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ObjectiveError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut w = Vec::new();
        let mut b = Vec::new();
        let mut d = None;
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| ObjectiveError::Parse { line, msg: e.to_string() })?;
            let vals = rec
                .iter()
                .map(|t| t.trim().parse::<f64>().map_err(|e| ObjectiveError::Parse { line, msg: format!("`{t}`: {e}") }))
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() < 2 {
                return Err(ObjectiveError::Parse { line, msg: "need at least one w column and b".into() });
            }
            let (wr, br) = vals.split_at(vals.len() - 1);
            match d {
                None => d = Some(wr.len()),
                Some(d) if d != wr.len() => return Err(ObjectiveError::Parse { line, msg: "ragged row".into() }),
                _ => {}
            }
            w.extend_from_slice(wr);
            b.push(br[0]);
        }
        let d = d.ok_or(ObjectiveError::Parse { line: 1, msg: "no data rows".into() })?;
        let m = b.len();
        Self::from_matrix(DMatrix::from_row_slice(m, d, &w), b)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), ObjectiveError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, ObjectiveError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Minimum eigenvalue of the Hessian `2wWᵀW`.
    pub fn hessian_min_eigenvalue(&self) -> f64 {
        2.0 * self.s_min * self.s_min * self.weight()
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let w = self.design();
        w.transpose() * &w * (2.0 * self.weight())
    }

    pub fn as_quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = self.design();
        let b = DVector::from_column_slice(&self.b);
        (self.hessian(), w.transpose() * b * (2.0 * self.weight()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Objective for LeastSquaresProblem {
    fn name(&self) -> &'static str {
        "least_squares"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        (0..self.m)
            .map(|i| {
                let r = dot(self.row(i), x) - self.b[i];
                r * r
            })
            .sum::<f64>()
            * self.weight()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.m {
            let wi = self.row(i);
            let r = dot(wi, x) - self.b[i];
            for (o, a) in out.iter_mut().zip(wi) {
                *o += r * a;
            }
        }
        let scale = 2.0 * self.weight();
        out.iter_mut().for_each(|o| *o *= scale);
    }

    fn values_rows(&self, xs: &[f64], out: &mut [f64]) {
        let m = self.m;
        let inv = self.weight();
        self.with_blocks(xs, |start, take, resid| {
            for r in 0..take {
                out[start + r] = resid[r * m..(r + 1) * m].iter().map(|v| v * v).sum::<f64>() * inv;
            }
        });
    }

    fn grads_rows(&self, xs: &[f64], out: &mut [f64]) {
        let (m, d) = (self.m, self.d);
        let alpha = 2.0 * self.weight();
        let mut gblock = vec![0.0; BLOCK * d];
        self.with_blocks(xs, |start, take, resid| {
            // SAFETY: resid is BLOCK×m, w is m×d, gblock is BLOCK×d, all row-major.
            unsafe {
                matrixmultiply::dgemm(
                    BLOCK, m, d,
                    alpha,
                    resid.as_ptr(), m as isize, 1,
                    self.w.as_ptr(), d as isize, 1,
                    0.0,
                    gblock.as_mut_ptr(), d as isize, 1,
                );
            }
            out[start * d..(start + take) * d].copy_from_slice(&gblock[..take * d]);
        });
    }

    /// `2w s_max (s_max + ‖b‖₂)`, valid on the simplex where `‖x‖₂ ≤ 1`.
    fn lipschitz(&self) -> f64 {
        let bn = self.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        2.0 * self.s_max * (self.s_max + bn) * self.weight()
    }

    fn strong_convexity(&self) -> f64 {
        self.hessian_min_eigenvalue()
    }

    fn supports(&self, noise: GradientNoise) -> bool {
        matches!(noise, GradientNoise::Exact | GradientNoise::MiniBatch { .. })
    }

    fn noisy_grad_into(&self, x: &[f64], noise: GradientNoise, key: NoiseKey, out: &mut [f64]) -> Result<(), ObjectiveError> {
        match noise {
            GradientNoise::Exact => {
                self.grad_into(x, out);
                Ok(())
            }
            GradientNoise::MiniBatch { batch_size } => self.batch_grad_into(x, batch_size, key, out),
            other => Err(ObjectiveError::Unsupported { noise: other, objective: self.name() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::testutil::{fd_grad, random_simplex_point};
    use approx::assert_relative_eq;

    fn identity_problem(d: usize) -> LeastSquaresProblem {
        LeastSquaresProblem::from_matrix(DMatrix::identity(d, d), vec![0.0; d]).unwrap()
    }

    #[test]
    fn identity_design_gradient() {
        let p = identity_problem(4);
        let x = [0.1, 0.2, 0.3, 0.4];
        let g = p.grad(&x);
        for (gi, xi) in g.iter().zip(&x) {
            assert_relative_eq!(*gi, 2.0 / 4.0 * xi, epsilon = 1e-16);
        }
        assert_relative_eq!(p.value(&[0.25; 4]), 1.0 / 16.0, epsilon = 1e-16);
    }

    #[test]
    fn condition_number_is_exact() {
        for (m, d, cond) in [(100, 100, 100.0), (200, 100, 200.0), (30, 10, 1.0), (10, 30, 10.0)] {
            let p = LeastSquaresProblem::generate(m, d, cond, 5).unwrap();
            let s = p.design().singular_values();
            let r = m.min(d);
            let mut sv: Vec<f64> = s.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            let kappa = sv[0] / sv[r - 1];
            assert_relative_eq!(kappa, cond, max_relative = 1e-6);
            assert_relative_eq!(sv[0], 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn scaled_singular_values() {
        let p = LeastSquaresProblem::generate_scaled(40, 20, 100.0, 100.0, 2).unwrap();
        let s = p.design().singular_values();
        let max = s.iter().copied().fold(0.0, f64::max);
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(max, 100.0, max_relative = 1e-9);
        assert_relative_eq!(min, 1.0, max_relative = 1e-9);
        assert_eq!(p.singular_value_range(), (1.0, 100.0));
    }

    #[test]
    fn sum_normalization_scales_by_m() {
        let mean = LeastSquaresProblem::generate(25, 8, 10.0, 4).unwrap();
        let sum = mean.clone().with_normalization(Normalization::Sum);
        let x = vec![0.125; 8];
        assert_relative_eq!(sum.value(&x), 25.0 * mean.value(&x), max_relative = 1e-12);
        let (gm, gs) = (mean.grad(&x), sum.grad(&x));
        for j in 0..8 {
            assert_relative_eq!(gs[j], 25.0 * gm[j], max_relative = 1e-12);
        }
        let mut acc = vec![0.0; 8];
        let mut g = vec![0.0; 8];
        let trials = 20000;
        for t in 0..trials {
            sum.batch_grad_into(&x, 5, NoiseKey { seed: 9, step: t, particle: 0 }, &mut g).unwrap();
            for j in 0..8 {
                acc[j] += g[j] / trials as f64;
            }
        }
        let scale = gs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for j in 0..8 {
            assert!((acc[j] - gs[j]).abs() < 0.05 * scale, "coordinate {j}: {} vs {}", acc[j], gs[j]);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LeastSquaresProblem::generate(10, 10, 0.5, 1).is_err());
        assert!(LeastSquaresProblem::generate(0, 10, 2.0, 1).is_err());
        assert!(LeastSquaresProblem::generate_scaled(10, 10, 2.0, 0.0, 1).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = LeastSquaresProblem::generate(30, 12, 10.0, 3).unwrap();
        let mut rng = rng::seeded(1, Stream::Initial);
        for _ in 0..100 {
            let x = random_simplex_point(&mut rng, 12);
            let g = p.grad(&x);
            let fd = fd_grad(&p, &x, 1e-6);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let p = LeastSquaresProblem::generate(40, 9, 30.0, 8).unwrap();
        let mut rng = rng::seeded(2, Stream::Initial);
        let rows = 37;
        let xs: Vec<f64> = (0..rows).flat_map(|_| random_simplex_point(&mut rng, 9)).collect();
        let mut g = vec![0.0; rows * 9];
        p.grads_rows(&xs, &mut g);
        let mut v = vec![0.0; rows];
        p.values_rows(&xs, &mut v);
        for r in 0..rows {
            let x = &xs[r * 9..(r + 1) * 9];
            for (a, b) in g[r * 9..(r + 1) * 9].iter().zip(p.grad(x)) {
                assert_relative_eq!(*a, b, epsilon = 1e-14);
            }
            assert_relative_eq!(v[r], p.value(x), max_relative = 1e-14);
            // A row's batched result does not depend on its neighbours.
            let mut alone = vec![0.0; 9];
            p.grads_rows(x, &mut alone);
            assert_eq!(&g[r * 9..(r + 1) * 9], alone.as_slice());
        }
    }

    #[test]
    fn full_batch_is_exact_gradient() {
        let p = LeastSquaresProblem::generate(20, 5, 4.0, 1).unwrap();
        let x = [0.2; 5];
        let mut g = vec![0.0; 5];
        p.batch_grad_into(&x, 20, NoiseKey { seed: 1, step: 2, particle: 3 }, &mut g).unwrap();
        assert_eq!(g, p.grad(&x));
        let mut batched = vec![0.0; 5];
        p.noisy_grad_into(&x, GradientNoise::MiniBatch { batch_size: 20 }, NoiseKey { seed: 1, step: 2, particle: 3 }, &mut batched).unwrap();
        assert_eq!(batched, g);
        assert!(p.batch_grad_into(&x, 21, NoiseKey { seed: 1, step: 2, particle: 3 }, &mut g).is_err());
    }

    #[test]
    fn batch_indices_are_reproducible() {
        let p = LeastSquaresProblem::generate(200, 10, 200.0, 1).unwrap();
        let key = NoiseKey { seed: 9, step: 14, particle: 3 };
        let a = p.batch_indices(10, key);
        assert_eq!(a, p.batch_indices(10, key));
        assert_ne!(a, p.batch_indices(10, NoiseKey { particle: 4, ..key }));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn csv_round_trip() {
        let p = LeastSquaresProblem::generate(6, 3, 5.0, 2).unwrap();
        let q = LeastSquaresProblem::from_csv(&p.to_csv()).unwrap();
        assert_eq!(q.design(), p.design());
        assert_eq!(q.rhs(), p.rhs());
        assert_relative_eq!(q.condition_number(), 5.0, max_relative = 1e-9);
    }
}
