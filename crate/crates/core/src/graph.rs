//! Doubly-stochastic interaction graphs and their Laplacians.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

/// Row/column sums must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;
const SINKHORN_TOL: f64 = 1e-13;
const SINKHORN_MAX_ITERS: usize = 100_000;
pub const ER_RETRY_CAP: u32 = 1000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("a graph needs at least one particle")]
    Empty,
    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("interaction strength must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("graph generation failed: no connected Erdős–Rényi sample with p={p}, N={n}, seed={seed} after {retries} attempts")]
    GenerationFailed { p: f64, n: usize, seed: u64, retries: u32 },
    #[error("Sinkhorn normalization did not converge (residual {residual:.3e})")]
    Sinkhorn { residual: f64 },
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight matrix entry ({i}, {j}) is invalid: {value}")]
    InvalidEntry { i: usize, j: usize, value: f64 },
    #[error("weight matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("weight matrix is not doubly stochastic: {axis} {index} sums to {sum}")]
    NotDoublyStochastic { axis: &'static str, index: usize, sum: f64 },
    #[error("algebraic connectivity is undefined for a single particle")]
    Singleton,
    #[error("state has {got} entries, expected {n} particles x {d} coordinates")]
    Dimension { n: usize, d: usize, got: usize },
    #[error("reading graph file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing graph file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    MeanField,
    ErdosRenyi { p: f64, seed: u64, retries: u32 },
    /// `A = I`: every particle only sees itself, so the drift vanishes.
    Independent,
    Custom,
}

#[derive(Debug, Clone)]
pub struct InteractionGraph {
    kind: GraphKind,
    weights: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    theta: f64,
    /// Spectrum of the unscaled Laplacian, ascending.
    spectrum: Vec<f64>,
    /// Off-diagonal nonzeros per row, ascending column index.
    neighbors: Vec<Vec<(usize, f64)>>,
    uniform: bool,
}

/// Per-step precomputation for [`InteractionGraph::drift_row`].
#[derive(Debug, Clone, Default)]
pub struct DriftPrep {
    mean: Option<Vec<f64>>,
}

impl InteractionGraph {
    fn build(kind: GraphKind, weights: DMatrix<f64>, uniform: bool) -> Self {
        let n = weights.nrows();
        let row_sums: Vec<f64> = (0..n).map(|i| weights.row(i).sum()).collect();
        let laplacian = DMatrix::from_fn(n, n, |i, j| if i == j { row_sums[i] - weights[(i, j)] } else { -weights[(i, j)] });
        let mut spectrum: Vec<f64> = SymmetricEigen::new(laplacian.clone()).eigenvalues.iter().copied().collect();
        spectrum.sort_by(|a, b| a.total_cmp(b));
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && weights[(i, j)] != 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        Self { kind, weights, laplacian, theta: 1.0, spectrum, neighbors, uniform }
    }

    /// `A_ij = 1/N`.
    pub fn mean_field(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let w = DMatrix::from_element(n, n, 1.0 / n as f64);
        Ok(Self::build(GraphKind::MeanField, w, true))
    }

    /// `A = I`, the non-interacting (i.i.d. replicas) case.
    pub fn independent(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self::build(GraphKind::Independent, DMatrix::identity(n, n), false))
    }

    /// Symmetric Erdős–Rényi adjacency with self-loops, resampled until
    /// connected and normalized to be doubly stochastic.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(GraphError::InvalidProbability(p));
        }
        let mut rng = rng::seeded(seed, Stream::Graph);
        for attempt in 0..ER_RETRY_CAP {
            let mut adj = DMatrix::<f64>::identity(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < p {
                        adj[(i, j)] = 1.0;
                        adj[(j, i)] = 1.0;
                    }
                }
            }
            if !is_connected(&adj) {
                continue;
            }
            let w = sinkhorn_symmetric(&adj)?;
            let uniform = p >= 1.0;
            let weights = if uniform { DMatrix::from_element(n, n, 1.0 / n as f64) } else { w };
            return Ok(Self::build(GraphKind::ErdosRenyi { p, seed, retries: attempt }, weights, uniform));
        }
        Err(GraphError::GenerationFailed { p, n, seed, retries: ER_RETRY_CAP })
    }

    /// Validates a user-supplied weight matrix against every invariant.
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        validate_weights(&weights)?;
        let n = weights.nrows();
        let first = weights[(0, 0)];
        let uniform = weights.iter().all(|&v| v == first) && (first - 1.0 / n as f64).abs() < 1e-15;
        Ok(Self::build(GraphKind::Custom, weights, uniform))
    }

    /// Loads a comma-separated N×N weight matrix.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_matrix(parse_matrix_csv(&text)?)
    }

    /// Scales the interaction to `θ·A`.
    pub fn with_theta(mut self, theta: f64) -> Result<Self, GraphError> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(GraphError::InvalidTheta(theta));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn n_particles(&self) -> usize {
        self.weights.nrows()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn is_singleton(&self) -> bool {
        self.n_particles() == 1
    }

    /// Whether every entry equals `1/N` (mean-field fast path).
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Eigenvalues of the unscaled Laplacian `L`, ascending.
    pub fn laplacian_spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Second-smallest eigenvalue of the unscaled `L`; `0` for a singleton.
    pub fn lambda_min_unscaled(&self) -> f64 {
        if self.spectrum.len() < 2 { 0.0 } else { self.spectrum[1].max(0.0) }
    }

    /// Largest eigenvalue of `θL`, i.e. the spectral norm of `θ(L⊗I)`.
    pub fn laplacian_norm(&self) -> f64 {
        self.theta * self.spectrum.last().copied().unwrap_or(0.0).max(0.0)
    }

    /// Second-smallest eigenvalue of `θL`.
    pub fn algebraic_connectivity(&self) -> Result<f64, GraphError> {
        if self.is_singleton() {
            return Err(GraphError::Singleton);
        }
        Ok(self.theta * self.lambda_min_unscaled())
    }

    pub fn is_connected(&self) -> bool {
        self.is_singleton() || self.lambda_min_unscaled() > 1e-10
    }

    /// Off-diagonal nonzero count: messages exchanged per round.
    pub fn messages_per_round(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        let n = self.n_particles();
        (0..n).map(|i| (self.weights.row(i).sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_col_sum_error(&self) -> f64 {
        let n = self.n_particles();
        (0..n).map(|j| (self.weights.column(j).sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_laplacian_row_sum(&self) -> f64 {
        let n = self.n_particles();
        (0..n).map(|i| self.laplacian.row(i).sum().abs()).fold(0.0, f64::max)
    }

    pub fn prepare(&self, z: &[f64], d: usize) -> DriftPrep {
        if !self.uniform {
            return DriftPrep::default();
        }
        let n = self.n_particles();
        let mut mean = vec![0.0; d];
        for row in z.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        DriftPrep { mean: Some(mean) }
    }

    /// Writes `θ Σⱼ A_ij (zⱼ − zᵢ)` for particle `i` into `out`.
    pub fn drift_row(&self, prep: &DriftPrep, z: &[f64], d: usize, i: usize, out: &mut [f64]) {
        let zi = &z[i * d..(i + 1) * d];
        if let Some(mean) = &prep.mean {
            for ((o, m), v) in out.iter_mut().zip(mean).zip(zi) {
                *o = self.theta * (m - v);
            }
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(j, a) in &self.neighbors[i] {
            let zj = &z[j * d..(j + 1) * d];
            for ((o, vj), vi) in out.iter_mut().zip(zj).zip(zi) {
                *o += a * (vj - vi);
            }
        }
        if self.theta != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.theta);
        }
    }

    /// `θ Σⱼ A_ij (Zⱼ − Zᵢ)` for every particle of a row-major `N×d` state.
    pub fn interaction_drift(&self, z: &[f64], d: usize) -> Result<Vec<f64>, GraphError> {
        let n = self.n_particles();
        if d == 0 || z.len() != n * d {
            return Err(GraphError::Dimension { n, d, got: z.len() });
        }
        let prep = self.prepare(z, d);
        let mut out = vec![0.0; n * d];
        for (i, row) in out.chunks_exact_mut(d).enumerate() {
            self.drift_row(&prep, z, d, i, row);
        }
        Ok(out)
    }
}

pub fn validate_weights(w: &DMatrix<f64>) -> Result<(), GraphError> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(GraphError::Empty);
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = w[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(GraphError::InvalidEntry { i, j, value: v });
            }
        }
    }
    for i in 0..rows {
        let sum = w.row(i).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(GraphError::NotDoublyStochastic { axis: "row", index: i, sum });
        }
    }
    for j in 0..cols {
        let sum = w.column(j).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(GraphError::NotDoublyStochastic { axis: "column", index: j, sum });
        }
    }
    for i in 0..rows {
        for j in (i + 1)..cols {
            let (a, b) = (w[(i, j)], w[(j, i)]);
            if (a - b).abs() > STOCHASTIC_TOL {
                return Err(GraphError::NotSymmetric { i, j, a, b });
            }
        }
    }
    Ok(())
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, GraphError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| GraphError::Parse { line: lineno + 1, msg: format!("`{t}`: {e}") }))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GraphError::Parse { line: lineno + 1, msg: format!("expected {} columns, found {}", first.len(), row.len()) });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GraphError::Empty);
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(w: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..w.nrows() {
        let row: Vec<String> = (0..w.ncols()).map(|j| format!("{:e}", w[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn is_connected(adj: &DMatrix<f64>) -> bool {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && adj[(i, j)] != 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Symmetric Sinkhorn scaling `A = D M D` with `D = diag(x)`, iterating
/// `x ← √(x / Mx)`. Keeps `A` exactly symmetric and preserves the pattern.
pub fn sinkhorn_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let n = m.nrows();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut residual = f64::INFINITY;
    for _ in 0..SINKHORN_MAX_ITERS {
        let mx: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[(i, j)] * x[j]).sum()).collect();
        residual = (0..n).map(|i| (x[i] * mx[i] - 1.0).abs()).fold(0.0, f64::max);
        if residual < SINKHORN_TOL {
            break;
        }
        for i in 0..n {
            x[i] = (x[i] / mx[i]).sqrt();
        }
    }
    let a = DMatrix::from_fn(n, n, |i, j| x[i] * m[(i, j)] * x[j]);
    let worst = (0..n).map(|i| (a.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
    if worst > 1e-10 {
        return Err(GraphError::Sinkhorn { residual: residual.max(worst) });
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_field_spectrum() {
        let g = InteractionGraph::mean_field(4).unwrap();
        assert!(g.weights().iter().all(|&v| v == 0.25));
        assert_relative_eq!(g.algebraic_connectivity().unwrap(), 1.0, epsilon = 1e-12);
        let g = InteractionGraph::mean_field(10).unwrap();
        assert!(g.max_row_sum_error() < 1e-15);
        assert_relative_eq!(g.algebraic_connectivity().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singleton() {
        let g = InteractionGraph::mean_field(1).unwrap();
        assert_eq!(g.weights()[(0, 0)], 1.0);
        assert_eq!(g.laplacian()[(0, 0)], 0.0);
        assert!(g.is_singleton());
        assert_eq!(g.lambda_min_unscaled(), 0.0);
        assert!(matches!(g.algebraic_connectivity(), Err(GraphError::Singleton)));
        assert!(matches!(InteractionGraph::mean_field(0), Err(GraphError::Empty)));
    }

    #[test]
    fn theta_scales_connectivity() {
        let g = InteractionGraph::mean_field(5).unwrap().with_theta(2.0).unwrap();
        assert_relative_eq!(g.algebraic_connectivity().unwrap(), 2.0, epsilon = 1e-12);
        assert!(InteractionGraph::mean_field(5).unwrap().with_theta(-1.0).is_err());
    }

    #[test]
    fn complete_er_is_mean_field() {
        let g = InteractionGraph::erdos_renyi(6, 1.0, 3).unwrap();
        for &v in g.weights().iter() {
            assert_relative_eq!(v, 1.0 / 6.0, epsilon = 1e-15);
        }
        assert_relative_eq!(g.algebraic_connectivity().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn er_is_doubly_stochastic_and_connected() {
        let g = InteractionGraph::erdos_renyi(10, 0.5, 42).unwrap();
        assert!(g.max_row_sum_error() < 1e-10);
        assert!(g.max_col_sum_error() < 1e-10);
        assert!(g.algebraic_connectivity().unwrap() > 0.0);
        let again = InteractionGraph::erdos_renyi(10, 0.5, 42).unwrap();
        assert_eq!(g.weights(), again.weights());
    }

    #[test]
    fn er_rejects_bad_probability() {
        assert!(matches!(InteractionGraph::erdos_renyi(5, 0.0, 1), Err(GraphError::InvalidProbability(_))));
        assert!(matches!(InteractionGraph::erdos_renyi(5, 1.5, 1), Err(GraphError::InvalidProbability(_))));
    }

    #[test]
    fn er_generation_failure_names_parameters() {
        let err = InteractionGraph::erdos_renyi(60, 1e-4, 9).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p=0.0001") && msg.contains("N=60") && msg.contains("seed=9"), "{msg}");
    }

    #[test]
    fn er_average_degree_tracks_p() {
        let mut total = 0usize;
        let seeds = 200;
        for seed in 0..seeds {
            total += InteractionGraph::erdos_renyi(10, 0.3, seed).unwrap().messages_per_round();
        }
        let avg_degree = total as f64 / (seeds as f64 * 10.0);
        // p(N-1) = 2.7 before conditioning on connectivity, which pushes it up.
        assert!(avg_degree > 2.5 && avg_degree < 4.0, "{avg_degree}");
    }

    #[test]
    fn drift_examples() {
        let g = InteractionGraph::mean_field(2).unwrap();
        let d = g.interaction_drift(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(d, vec![-0.5, 0.5, 0.5, -0.5]);
        let consensus = [0.3, -0.2, 0.3, -0.2, 0.3, -0.2];
        let g = InteractionGraph::erdos_renyi(3, 0.9, 1).unwrap();
        assert!(g.interaction_drift(&consensus, 2).unwrap().iter().all(|&v| v == 0.0));
        let ind = InteractionGraph::independent(2).unwrap();
        assert!(ind.interaction_drift(&[1.0, 5.0, -3.0, 2.0], 2).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(g.interaction_drift(&[1.0; 5], 2), Err(GraphError::Dimension { .. })));
    }

    #[test]
    fn corrupted_matrix_names_row() {
        let mut w = DMatrix::from_element(3, 3, 1.0 / 3.0);
        w[(1, 1)] += 0.1;
        match InteractionGraph::from_matrix(w) {
            Err(GraphError::NotDoublyStochastic { axis: "row", index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = InteractionGraph::erdos_renyi(5, 0.6, 11).unwrap();
        let text = write_matrix_csv(g.weights());
        let back = InteractionGraph::from_matrix(parse_matrix_csv(&text).unwrap()).unwrap();
        assert_relative_eq!(back.weights(), g.weights(), epsilon = 1e-15);
        assert!(matches!(parse_matrix_csv("1,2\n3\n"), Err(GraphError::Parse { line: 2, .. })));
    }

    #[test]
    fn communication_counts() {
        assert_eq!(InteractionGraph::mean_field(10).unwrap().messages_per_round(), 90);
        assert_eq!(InteractionGraph::independent(10).unwrap().messages_per_round(), 0);
    }
}
