//! Fast self-checks of the core identities, run by `ismd verify`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{bregman_consensus_step_check, Ensemble, Init, Integrator, IntegratorConfig, Schedule};
use crate::graph::{parse_matrix_csv, validate_weights, InteractionGraph};
use crate::metrics::fluctuation_stats;
use crate::mirror::{MapKind, MirrorMap};
use crate::objective::{LeastSquaresProblem, QuadraticObjective};
use crate::oracle::ou_stationary;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }

    fn from_result(name: &str, r: Result<String, String>) -> Self {
        match r {
            Ok(d) => Self::new(name, true, d),
            Err(d) => Self::new(name, false, d),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn mirror_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for kind in [MapKind::Euclidean, MapKind::Entropy] {
        for scale in [1.0, 2.5] {
            let map = MirrorMap::new(kind, 6).scaled(scale).map_err(|e| e.to_string())?;
            for _ in 0..20 {
                let z = gaussian(&mut rng, 6);
                let x = map.grad_conjugate(&z).map_err(|e| e.to_string())?;
                // Fenchel–Young equality at x = ∇Φ*(z).
                let dot: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
                worst = worst.max((map.potential(&x) + map.conjugate(&z) - dot).abs());
                let back = map.grad_conjugate(&map.preimage(&x)).map_err(|e| e.to_string())?;
                for (a, b) in back.iter().zip(&x) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    if worst < 1e-9 { Ok(format!("max error {worst:.1e}")) } else { Err(format!("max error {worst:.1e} exceeds 1e-9")) }
}

fn check_graph(name: &str, g: &InteractionGraph) -> Result<(), String> {
    let (r, c, l) = (g.max_row_sum_error(), g.max_col_sum_error(), g.max_laplacian_row_sum());
    if r > 1e-12 || c > 1e-12 || l > 1e-12 {
        return Err(format!("{name}: row {r:.1e}, column {c:.1e}, Laplacian row {l:.1e}"));
    }
    let w = g.weights();
    if (w - w.transpose()).amax() > 1e-12 {
        return Err(format!("{name}: not symmetric"));
    }
    Ok(())
}

fn graph_invariants() -> Result<String, String> {
    let graphs = [
        ("mean_field", InteractionGraph::mean_field(9)),
        ("independent", InteractionGraph::independent(9)),
        ("erdos_renyi", InteractionGraph::erdos_renyi(9, 0.4, 3)),
    ];
    for (name, g) in graphs {
        check_graph(name, &g.map_err(|e| e.to_string())?)?;
    }
    Ok("row, column and Laplacian sums within 1e-12".into())
}

fn drift_cancellation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (8, 5);
    let g = InteractionGraph::erdos_renyi(n, 0.5, 7).and_then(|g| g.with_theta(3.0)).map_err(|e| e.to_string())?;
    let z = gaussian(&mut rng, n * d);
    let drift = g.interaction_drift(&z, d).map_err(|e| e.to_string())?;
    let total = (0..d).map(|j| (0..n).map(|i| drift[i * d + j]).sum::<f64>().abs()).fold(0.0, f64::max);
    if total < 1e-12 { Ok(format!("|Σᵢ driftᵢ| = {total:.1e}")) } else { Err(format!("|Σᵢ driftᵢ| = {total:.1e}")) }
}

/// Long-run fluctuation of a small Ornstein–Uhlenbeck ensemble against the
/// Lyapunov solution.
fn ou_match() -> Result<String, String> {
    let q = QuadraticObjective::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DVector::from_vec(vec![0.3, -0.2]))
        .map_err(|e| e.to_string())?;
    let g = InteractionGraph::mean_field(3).and_then(|g| g.with_theta(0.5)).map_err(|e| e.to_string())?;
    let (eta, sigma, eps) = (1.0, 0.6, 2e-3);
    let exact = ou_stationary(&q, &g, sigma, eta).map_err(|e| e.to_string())?;
    let target = exact.mean_square_fluctuation();
    let map = MirrorMap::euclidean(2);
    let steps = 400_000;
    let burn = 20_000;
    let cfg = IntegratorConfig::new(eps, Schedule::constant(eta), Schedule::constant(sigma), steps, 17);
    let mut ens = Ensemble::initialize(&map, 3, Init::Zeros, 17).map_err(|e| e.to_string())?;
    let (mut acc, mut count) = (0.0, 0u64);
    Integrator::new(&q, &map, &g, cfg)
        .and_then(|mut it| {
            it.run_with(&mut ens, 10, |e, info| {
                if info.k >= burn {
                    acc += fluctuation_stats(e.mirror(), 2).mean_sq;
                    count += 1;
                }
            })
        })
        .map_err(|e| e.to_string())?;
    let empirical = acc / count as f64;
    let rel = (empirical - target).abs() / target;
    let detail = format!("empirical {empirical:.4e}, exact {target:.4e}, relative error {rel:.3}");
    if rel < 0.1 { Ok(detail) } else { Err(detail) }
}

fn bregman_step() -> Result<String, String> {
    let p = LeastSquaresProblem::generate(20, 6, 10.0, 2).map_err(|e| e.to_string())?;
    let map = MirrorMap::entropy(6);
    let g = InteractionGraph::erdos_renyi(6, 0.6, 4).and_then(|g| g.with_theta(2.0)).map_err(|e| e.to_string())?;
    let ens = Ensemble::initialize(&map, 6, Init::Gaussian { scale: 1.0 }, 8).map_err(|e| e.to_string())?;
    let err = bregman_consensus_step_check(&ens, &g, &p, &map, 0.7, 0.1).map_err(|e| e.to_string())?;
    if err < 1e-10 { Ok(format!("max discrepancy {err:.1e}")) } else { Err(format!("max discrepancy {err:.1e}")) }
}

/// `A = I` with `N` particles reproduces `N` separate single-particle runs.
fn degenerate_equivalence() -> Result<String, String> {
    let p = LeastSquaresProblem::generate(15, 5, 10.0, 6).map_err(|e| e.to_string())?;
    let map = MirrorMap::entropy(5);
    let n = 4;
    let cfg = IntegratorConfig::new(0.1, Schedule::InverseSqrt { base: 0.5 }, Schedule::constant(0.2), 50, 21);
    let init = Init::Gaussian { scale: 0.5 };
    let e = |e: crate::dynamics::DynamicsError| e.to_string();
    let g = InteractionGraph::independent(n).map_err(|e| e.to_string())?;
    let mut joint = Ensemble::initialize(&map, n, init, 21).map_err(e)?;
    Integrator::new(&p, &map, &g, cfg.clone()).and_then(|mut it| it.run_with(&mut joint, 50, |_, _| {})).map_err(e)?;
    let single = InteractionGraph::independent(1).map_err(|e| e.to_string())?;
    for i in 0..n {
        let mut one = Ensemble::initialize_ids(&map, 1, init, 21, i as u64).map_err(e)?;
        Integrator::new(&p, &map, &single, cfg.clone()).and_then(|mut it| it.run_with(&mut one, 50, |_, _| {})).map_err(e)?;
        if one.mirror_row(0) != joint.mirror_row(i) {
            return Err(format!("particle {i} differs from its separate run"));
        }
    }
    Ok(format!("{n} particles bitwise identical"))
}

/// Checks a user-supplied interaction matrix, naming the offending row or column.
pub fn check_graph_csv(path: &Path) -> CheckResult {
    let name = "graph_csv";
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return CheckResult::new(name, false, format!("{}: {e}", path.display())),
    };
    let res = parse_matrix_csv(&text).and_then(|w| {
        validate_weights(&w)?;
        let g = InteractionGraph::from_matrix(w)?;
        Ok(format!("{} particles, {} messages per round", g.n_particles(), g.messages_per_round()))
    });
    CheckResult::from_result(name, res.map_err(|e| format!("{}: {e}", path.display())))
}

/// The full suite, plus the graph file when given.
pub fn run_suite(graph_csv: Option<&Path>) -> Vec<CheckResult> {
    let checks: [(&str, fn() -> Result<String, String>); 6] = [
        ("mirror_identities", mirror_identities),
        ("graph_invariants", graph_invariants),
        ("drift_cancellation", drift_cancellation),
        ("bregman_consensus_step", bregman_step),
        ("degenerate_equivalence", degenerate_equivalence),
        ("ou_stationary_match", ou_match),
    ];
    let mut out: Vec<CheckResult> = checks.iter().map(|(n, f)| CheckResult::from_result(n, f())).collect();
    if let Some(p) = graph_csv {
        out.push(check_graph_csv(p));
    }
    out
}
