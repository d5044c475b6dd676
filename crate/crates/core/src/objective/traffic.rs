use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GradientNoise, NoiseKey, Objective, ObjectiveError, QuadraticObjective};
use crate::rng::{self, Stream};

/// Enumeration stops with an error past this many paths.
pub const MAX_PATHS: usize = 20_000;
const CONNECT_ATTEMPTS: u32 = 1000;
const TUNE_ATTEMPTS: u32 = 50;

/// Acceptable range for the number of enumerated paths when tuning the radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficTarget {
    pub min_paths: usize,
    pub max_paths: usize,
}

/// Path-flow traffic assignment on a single origin–destination pair:
/// `f(x) = Σ_e a_e u_e + ½ b_e u_e²` with edge loads `u = P x`.
#[derive(Debug, Clone)]
pub struct TrafficProblem {
    n_nodes: usize,
    radius: f64,
    origin: usize,
    destination: usize,
    r_max: usize,
    seed: Option<u64>,
    edges: Vec<(usize, usize)>,
    base_cost: Vec<f64>,
    congestion: Vec<f64>,
    /// Edge ids of each path.
    paths: Vec<Vec<usize>>,
}

struct Geometry {
    points: Vec<(f64, f64)>,
    origin: usize,
    destination: usize,
}

impl Geometry {
    fn sample<R: Rng>(rng: &mut R, n: usize) -> Self {
        let points = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let origin = rng.random_range(0..n);
        let mut destination = rng.random_range(0..n - 1);
        if destination >= origin {
            destination += 1;
        }
        Self { points, origin, destination }
    }

    fn edges(&self, radius: f64) -> Vec<(usize, usize, f64)> {
        let n = self.points.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (self.points[i], self.points[j]);
                let dist = (a.0 - b.0).hypot(a.1 - b.1);
                if dist <= radius {
                    out.push((i, j, dist));
                }
            }
        }
        out
    }
}

fn adjacency(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for (e, &(a, b, _)) in edges.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    adj
}

fn reachable(adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(v) = queue.pop_front() {
        if v == to {
            return true;
        }
        for &(w, _) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    false
}

/// Simple paths with at most `r_max` edges, as edge-id lists, in DFS order.
/// Returns `None` once more than `limit` paths have been found.
fn enumerate_paths(adj: &[Vec<(usize, usize)>], origin: usize, dest: usize, r_max: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    fn dfs(
        adj: &[Vec<(usize, usize)>],
        v: usize,
        dest: usize,
        r_max: usize,
        limit: usize,
        on_path: &mut [bool],
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> bool {
        if v == dest {
            out.push(stack.clone());
            return out.len() <= limit;
        }
        if stack.len() == r_max {
            return true;
        }
        for &(w, e) in &adj[v] {
            if on_path[w] {
                continue;
            }
            on_path[w] = true;
            stack.push(e);
            let ok = dfs(adj, w, dest, r_max, limit, on_path, stack, out);
            stack.pop();
            on_path[w] = false;
            if !ok {
                return false;
            }
        }
        true
    }
    let mut on_path = vec![false; adj.len()];
    on_path[origin] = true;
    let mut out = Vec::new();
    dfs(adj, origin, dest, r_max, limit, &mut on_path, &mut Vec::new(), &mut out).then_some(out)
}

impl TrafficProblem {
    /// Builds the problem on an explicit undirected graph with edge lengths
    /// as base costs and unit congestion.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)], origin: usize, destination: usize, r_max: usize) -> Result<Self, ObjectiveError> {
        if origin >= n_nodes || destination >= n_nodes || origin == destination {
            return Err(ObjectiveError::InvalidParameter(format!(
                "origin {origin} and destination {destination} must be distinct nodes below {n_nodes}"
            )));
        }
        if let Some(&(a, b, _)) = edges.iter().find(|(a, b, _)| *a >= n_nodes || *b >= n_nodes || a == b) {
            return Err(ObjectiveError::InvalidParameter(format!("invalid edge ({a}, {b})")));
        }
        let adj = adjacency(n_nodes, edges);
        let paths = enumerate_paths(&adj, origin, destination, r_max, MAX_PATHS).ok_or(ObjectiveError::TooManyPaths { limit: MAX_PATHS })?;
        if paths.is_empty() {
            return Err(ObjectiveError::NoPaths { n: n_nodes, radius: f64::NAN, r_max, seed: 0, attempts: 1 });
        }
        Ok(Self {
            n_nodes,
            radius: f64::NAN,
            origin,
            destination,
            r_max,
            seed: None,
            edges: edges.iter().map(|&(a, b, _)| (a, b)).collect(),
            base_cost: edges.iter().map(|e| e.2).collect(),
            congestion: vec![1.0; edges.len()],
            paths,
        })
    }

    /// Random geometric graph `G(n, r)` on the unit square with a random
    /// origin–destination pair, resampled until the pair is connected.
    pub fn generate(n: usize, radius: f64, r_max: usize, seed: u64) -> Result<Self, ObjectiveError> {
        if n < 2 {
            return Err(ObjectiveError::InvalidParameter(format!("need at least 2 nodes, got {n}")));
        }
        if !(radius > 0.0) || r_max == 0 {
            return Err(ObjectiveError::InvalidParameter(format!("radius and r_max must be positive (r={radius}, r_max={r_max})")));
        }
        let mut rng = rng::seeded(seed, Stream::Problem);
        for attempt in 1..=CONNECT_ATTEMPTS {
            let geo = Geometry::sample(&mut rng, n);
            let edges = geo.edges(radius);
            let adj = adjacency(n, &edges);
            if !reachable(&adj, geo.origin, geo.destination) {
                continue;
            }
            return Self::finish(n, radius, r_max, seed, &geo, &edges, &adj, attempt);
        }
        Err(ObjectiveError::NoPaths { n, radius, r_max, seed, attempts: CONNECT_ATTEMPTS })
    }

    /// Like [`generate`](Self::generate) but bisects the radius until the
    /// number of paths lands in the target range.
    pub fn generate_with_target(n: usize, r_max: usize, target: TrafficTarget, seed: u64) -> Result<Self, ObjectiveError> {
        if n < 2 || r_max == 0 || target.min_paths == 0 || target.min_paths > target.max_paths {
            return Err(ObjectiveError::InvalidParameter(format!(
                "bad traffic target: n={n}, r_max={r_max}, paths {}..={}",
                target.min_paths, target.max_paths
            )));
        }
        let mut rng = rng::seeded(seed, Stream::Problem);
        let count = |geo: &Geometry, r: f64| {
            let edges = geo.edges(r);
            let adj = adjacency(n, &edges);
            enumerate_paths(&adj, geo.origin, geo.destination, r_max, target.max_paths).map_or(usize::MAX, |p| p.len())
        };
        for attempt in 1..=TUNE_ATTEMPTS {
            let geo = Geometry::sample(&mut rng, n);
            let (mut lo, mut hi) = (0.0, std::f64::consts::SQRT_2);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let c = count(&geo, mid);
                if c < target.min_paths {
                    lo = mid;
                } else if c > target.max_paths {
                    hi = mid;
                } else {
                    let edges = geo.edges(mid);
                    let adj = adjacency(n, &edges);
                    return Self::finish(n, mid, r_max, seed, &geo, &edges, &adj, attempt);
                }
            }
        }
        Err(ObjectiveError::TargetUnreachable { n, r_max, lo: target.min_paths, hi: target.max_paths })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        n: usize,
        radius: f64,
        r_max: usize,
        seed: u64,
        geo: &Geometry,
        edges: &[(usize, usize, f64)],
        adj: &[Vec<(usize, usize)>],
        attempts: u32,
    ) -> Result<Self, ObjectiveError> {
        let paths = enumerate_paths(adj, geo.origin, geo.destination, r_max, MAX_PATHS).ok_or(ObjectiveError::TooManyPaths { limit: MAX_PATHS })?;
        if paths.is_empty() {
            return Err(ObjectiveError::NoPaths { n, radius, r_max, seed, attempts });
        }
        // Keep only edges that some path uses.
        let mut remap = vec![usize::MAX; edges.len()];
        let mut kept = Vec::new();
        let mut paths = paths;
        for path in &mut paths {
            for e in path.iter_mut() {
                if remap[*e] == usize::MAX {
                    remap[*e] = kept.len();
                    kept.push(edges[*e]);
                }
                *e = remap[*e];
            }
        }
        Ok(Self {
            n_nodes: n,
            radius,
            origin: geo.origin,
            destination: geo.destination,
            r_max,
            seed: Some(seed),
            edges: kept.iter().map(|&(a, b, _)| (a, b)).collect(),
            base_cost: kept.iter().map(|e| e.2).collect(),
            congestion: vec![1.0; kept.len()],
            paths,
        })
    }

    pub fn with_congestion(mut self, b: f64) -> Result<Self, ObjectiveError> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(ObjectiveError::InvalidParameter(format!("congestion must be non-negative, got {b}")));
        }
        self.congestion.iter_mut().for_each(|c| *c = b);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.base_cost.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn r_max(&self) -> usize {
        self.r_max
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Node pairs of each edge (empty for problems loaded from CSV).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.origin, self.destination)
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn base_cost(&self) -> &[f64] {
        &self.base_cost
    }

    pub fn congestion(&self) -> &[f64] {
        &self.congestion
    }

    /// Sum of base costs along each path.
    pub fn path_lengths(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.iter().map(|&e| self.base_cost[e]).sum()).collect()
    }

    /// `E × d` 0/1 matrix, entry `(e, j)` set when path `j` uses edge `e`.
    pub fn path_incidence(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_edges(), self.paths.len());
        for (j, path) in self.paths.iter().enumerate() {
            for &e in path {
                p[(e, j)] = 1.0;
            }
        }
        p
    }

    /// The same objective as `½ xᵀ(PᵀBP)x + (Pᵀa)ᵀx`.
    pub fn as_quadratic(&self) -> QuadraticObjective {
        let p = self.path_incidence();
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(&self.congestion));
        let q = p.transpose() * b * &p;
        let c = -(p.transpose() * DVector::from_column_slice(&self.base_cost));
        QuadraticObjective::new((&q + q.transpose()) * 0.5, c).expect("PᵀBP is symmetric PSD")
    }

    pub fn edge_loads(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_edges()];
        for (path, xj) in self.paths.iter().zip(x) {
            for &e in path {
                u[e] += xj;
            }
        }
        u
    }

    fn grad_with_edge_costs(&self, x: &[f64], extra: Option<&[f64]>, out: &mut [f64]) {
        let mut cost = self.edge_loads(x);
        for (e, c) in cost.iter_mut().enumerate() {
            *c = self.base_cost[e] + self.congestion[e] * *c + extra.map_or(0.0, |xi| xi[e]);
        }
        for (o, path) in out.iter_mut().zip(&self.paths) {
            *o = path.iter().map(|&e| cost[e]).sum();
        }
    }

    /// Gradient with every edge cost perturbed by an independent `N(0, σ_g²)`
    /// draw from the `(seed, step, particle)` cell.
    pub fn noisy_grad(&self, x: &[f64], sigma_g: f64, key: NoiseKey, out: &mut [f64]) {
        if sigma_g == 0.0 {
            self.grad_with_edge_costs(x, None, out);
            return;
        }
        let mut rng = rng::counter_rng(key.seed, Stream::EdgeNoise, key.step, key.particle);
        let mut xi = vec![0.0; self.n_edges()];
        rng::fill_standard_normal(&mut rng, &mut xi);
        xi.iter_mut().for_each(|v| *v *= sigma_g);
        self.grad_with_edge_costs(x, Some(&xi), out);
    }

    /// Rows `base_cost,congestion,p0..p{d-1}`, one per edge.
    pub fn to_csv(&self) -> String {
        let p = self.path_incidence();
        let mut s = String::from("base_cost,congestion");
        for j in 0..self.paths.len() {
            s.push_str(&format!(",p{j}"));
        }
        s.push('\n');
        for e in 0..self.n_edges() {
            s.push_str(&format!("{:e},{:e}", self.base_cost[e], self.congestion[e]));
            for j in 0..self.paths.len() {
                s.push_str(if p[(e, j)] != 0.0 { ",1" } else { ",0" });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ObjectiveError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut base_cost = Vec::new();
        let mut congestion = Vec::new();
        let mut paths: Vec<Vec<usize>> = Vec::new();
        for (e, rec) in rdr.records().enumerate() {
            let line = e + 2;
            let rec = rec.map_err(|err| ObjectiveError::Parse { line, msg: err.to_string() })?;
            let vals = rec
                .iter()
                .map(|t| t.trim().parse::<f64>().map_err(|err| ObjectiveError::Parse { line, msg: format!("`{t}`: {err}") }))
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() < 3 {
                return Err(ObjectiveError::Parse { line, msg: "need base_cost, congestion and at least one path column".into() });
            }
            if paths.is_empty() {
                paths = vec![Vec::new(); vals.len() - 2];
            } else if paths.len() != vals.len() - 2 {
                return Err(ObjectiveError::Parse { line, msg: "ragged row".into() });
            }
            base_cost.push(vals[0]);
            congestion.push(vals[1]);
            for (j, v) in vals[2..].iter().enumerate() {
                match *v {
                    1.0 => paths[j].push(e),
                    0.0 => {}
                    other => return Err(ObjectiveError::Parse { line, msg: format!("incidence entry {other} is not 0 or 1") }),
                }
            }
        }
        if let Some(j) = paths.iter().position(|p| p.is_empty()) {
            return Err(ObjectiveError::Parse { line: 1, msg: format!("path p{j} uses no edges") });
        }
        if paths.is_empty() {
            return Err(ObjectiveError::Parse { line: 1, msg: "no data rows".into() });
        }
        Ok(Self {
            n_nodes: 0,
            radius: f64::NAN,
            origin: 0,
            destination: 0,
            r_max: paths.iter().map(Vec::len).max().unwrap_or(0),
            seed: None,
            edges: Vec::new(),
            base_cost,
            congestion,
            paths,
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), ObjectiveError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, ObjectiveError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

impl Objective for TrafficProblem {
    fn name(&self) -> &'static str {
        "traffic"
    }

    fn dim(&self) -> usize {
        self.paths.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.edge_loads(x)
            .iter()
            .enumerate()
            .map(|(e, u)| self.base_cost[e] * u + 0.5 * self.congestion[e] * u * u)
            .sum()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        self.grad_with_edge_costs(x, None, out);
    }

    /// Loads are at most 1 on the simplex, so each partial derivative is at
    /// most the path's `Σ (a_e + b_e)`.
    fn lipschitz(&self) -> f64 {
        let worst = self
            .paths
            .iter()
            .map(|p| p.iter().map(|&e| self.base_cost[e] + self.congestion[e]).sum::<f64>())
            .fold(0.0, f64::max);
        worst * (self.paths.len() as f64).sqrt()
    }

    fn supports(&self, noise: GradientNoise) -> bool {
        matches!(noise, GradientNoise::Exact | GradientNoise::EdgeNoise { .. })
    }

    fn noisy_grad_into(&self, x: &[f64], noise: GradientNoise, key: NoiseKey, out: &mut [f64]) -> Result<(), ObjectiveError> {
        match noise {
            GradientNoise::Exact => {
                self.grad_into(x, out);
                Ok(())
            }
            GradientNoise::EdgeNoise { sigma_g } if sigma_g >= 0.0 => {
                self.noisy_grad(x, sigma_g, key, out);
                Ok(())
            }
            GradientNoise::EdgeNoise { sigma_g } => Err(ObjectiveError::InvalidParameter(format!("sigma_g must be >= 0, got {sigma_g}"))),
            other => Err(ObjectiveError::Unsupported { noise: other, objective: self.name() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::testutil::{fd_grad, random_simplex_point};
    use approx::assert_relative_eq;

    #[test]
    fn single_edge() {
        let p = TrafficProblem::from_edges(2, &[(0, 1, 0.7)], 0, 1, 1).unwrap();
        assert_eq!(p.dim(), 1);
        assert_relative_eq!(p.value(&[1.0]), 0.7 + 0.5);
        assert_eq!(p.grad(&[1.0]), vec![1.7]);
    }

    #[test]
    fn triangle_prefers_short_path() {
        // 0-2 direct (length 1.0) versus 0-1-2 (0.3 + 0.4).
        let p = TrafficProblem::from_edges(3, &[(0, 2, 1.0), (0, 1, 0.3), (1, 2, 0.4)], 0, 2, 2)
            .unwrap()
            .with_congestion(0.0)
            .unwrap();
        assert_eq!(p.dim(), 2);
        let lengths = p.path_lengths();
        let short = if lengths[0] < lengths[1] { 0 } else { 1 };
        let g = p.grad(&[0.5, 0.5]);
        assert!(g[short] < g[1 - short]);
        let mut x = [0.0; 2];
        x[short] = 1.0;
        assert_relative_eq!(p.value(&x), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn no_paths_names_r_max() {
        let err = TrafficProblem::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], 0, 3, 2).unwrap_err();
        assert!(err.to_string().contains("r_max=2"), "{err}");
    }

    #[test]
    fn generated_paths_are_simple_and_bounded() {
        let p = TrafficProblem::generate(30, 0.35, 4, 11).unwrap();
        let (o, dst) = p.endpoints();
        for path in p.paths() {
            assert!(path.len() <= 4);
            let mut at = o;
            let mut visited = vec![o];
            for &e in path {
                let (a, b) = p.edges[e];
                at = if a == at { b } else { assert_eq!(b, at); a };
                assert!(!visited.contains(&at));
                visited.push(at);
            }
            assert_eq!(at, dst);
        }
    }

    #[test]
    fn radius_tuning_hits_target() {
        let target = TrafficTarget { min_paths: 50, max_paths: 100 };
        let p = TrafficProblem::generate_with_target(50, 5, target, 3).unwrap();
        assert!((50..=100).contains(&p.dim()), "d = {}", p.dim());
    }

    #[test]
    fn gradient_and_quadratic_form_agree() {
        let p = TrafficProblem::generate(25, 0.4, 4, 2).unwrap();
        let q = p.as_quadratic();
        let mut rng = rng::seeded(4, Stream::Initial);
        for _ in 0..100 {
            let x = random_simplex_point(&mut rng, p.dim());
            let g = p.grad(&x);
            let fd = fd_grad(&p, &x, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
            }
            assert_relative_eq!(p.value(&x), q.value(&x), max_relative = 1e-12);
        }
    }

    #[test]
    fn single_edge_noise_variance() {
        let p = TrafficProblem::from_edges(2, &[(0, 1, 1.0)], 0, 1, 1).unwrap();
        let sigma_g = 0.3;
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut g = [0.0];
        for k in 0..n {
            p.noisy_grad(&[1.0], sigma_g, NoiseKey { seed: 5, step: k, particle: 0 }, &mut g);
            s1 += g[0];
            s2 += g[0] * g[0];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 2.0).abs() < 3.0 * sigma_g / (n as f64).sqrt());
        assert_relative_eq!(var, sigma_g * sigma_g, max_relative = 0.02);
    }

    #[test]
    fn csv_round_trip() {
        let p = TrafficProblem::generate(20, 0.4, 3, 8).unwrap();
        let q = TrafficProblem::from_csv(&p.to_csv()).unwrap();
        let x = vec![1.0 / p.dim() as f64; p.dim()];
        assert_eq!(p.dim(), q.dim());
        assert_relative_eq!(p.value(&x), q.value(&x), max_relative = 1e-15);
    }
}
