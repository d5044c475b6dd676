use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::config::{GraphSpec, ProblemSpec, Topology};
use super::HarnessError;
use crate::graph::InteractionGraph;
use crate::objective::{LeastSquaresProblem, Normalization, Objective, QuadraticObjective, TrafficProblem};

/// A constructed problem instance.
#[derive(Debug, Clone)]
pub enum BuiltProblem {
    LeastSquares(LeastSquaresProblem),
    Traffic(TrafficProblem),
    Quadratic(QuadraticObjective),
}

impl BuiltProblem {
    pub fn build(spec: &ProblemSpec, run_seed: u64) -> Result<Self, HarnessError> {
        let err = |e: crate::objective::ObjectiveError| HarnessError::Config(format!("problem: {e}"));
        Ok(match spec {
            ProblemSpec::LeastSquares { m, d, cond, s_max, normalization, seed } => BuiltProblem::LeastSquares(
                LeastSquaresProblem::generate_scaled(*m, *d, *cond, *s_max, seed.unwrap_or(run_seed))
                    .map_err(err)?
                    .with_normalization(*normalization),
            ),
            ProblemSpec::Traffic { n, r_max, radius, target, congestion, seed } => {
                let s = seed.unwrap_or(run_seed);
                let p = match (radius, target) {
                    (Some(r), _) => TrafficProblem::generate(*n, *r, *r_max, s),
                    (_, Some(t)) => TrafficProblem::generate_with_target(*n, *r_max, *t, s),
                    _ => unreachable!("validated"),
                }
                .map_err(err)?;
                BuiltProblem::Traffic(p.with_congestion(*congestion).map_err(err)?)
            }
            ProblemSpec::Quadratic { q, c } => {
                let d = c.len();
                let q = DMatrix::from_row_iterator(d, d, q.iter().flatten().copied());
                BuiltProblem::Quadratic(QuadraticObjective::new(q, DVector::from_column_slice(c)).map_err(err)?)
            }
            ProblemSpec::LeastSquaresCsv { path, normalization } => BuiltProblem::LeastSquares(
                LeastSquaresProblem::load_csv(path)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
                    .with_normalization(*normalization),
            ),
            ProblemSpec::TrafficCsv { path } => BuiltProblem::Traffic(
                TrafficProblem::load_csv(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            ),
        })
    }

    pub fn objective(&self) -> &dyn Objective {
        match self {
            BuiltProblem::LeastSquares(p) => p,
            BuiltProblem::Traffic(p) => p,
            BuiltProblem::Quadratic(p) => p,
        }
    }

    /// CSV form for the file-backed families.
    pub fn to_csv(&self) -> Option<String> {
        match self {
            BuiltProblem::LeastSquares(p) => Some(p.to_csv()),
            BuiltProblem::Traffic(p) => Some(p.to_csv()),
            BuiltProblem::Quadratic(_) => None,
        }
    }

    pub fn as_quadratic(&self) -> Result<QuadraticObjective, HarnessError> {
        match self {
            BuiltProblem::LeastSquares(p) => {
                let (q, c) = p.as_quadratic();
                QuadraticObjective::new(q, c).map_err(|e| HarnessError::Config(e.to_string()))
            }
            BuiltProblem::Traffic(p) => Ok(p.as_quadratic()),
            BuiltProblem::Quadratic(q) => Ok(q.clone()),
        }
    }
}

/// Loads a problem CSV, telling the families apart by their header.
pub fn load_problem_csv(path: &Path, normalization: Normalization) -> Result<BuiltProblem, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or("");
    let err = |e: crate::objective::ObjectiveError| HarnessError::Config(format!("{}: {e}", path.display()));
    if header.starts_with("base_cost") {
        Ok(BuiltProblem::Traffic(TrafficProblem::from_csv(&text).map_err(err)?))
    } else if header.starts_with("w0") {
        Ok(BuiltProblem::LeastSquares(LeastSquaresProblem::from_csv(&text).map_err(err)?.with_normalization(normalization)))
    } else {
        Err(HarnessError::Config(format!("{}: unrecognized problem header `{header}`", path.display())))
    }
}

/// Builds the interaction graph for `n` particles.
pub fn build_graph(spec: &GraphSpec, kind: Topology, n: usize, p: Option<f64>, theta: f64, run_seed: u64) -> Result<InteractionGraph, HarnessError> {
    let err = |e: crate::graph::GraphError| HarnessError::Config(format!("graph: {e}"));
    let g = match kind {
        Topology::MeanField => InteractionGraph::mean_field(n).map_err(err)?,
        Topology::Independent => InteractionGraph::independent(n).map_err(err)?,
        Topology::ErdosRenyi => {
            let p = p.ok_or_else(|| HarnessError::Config("erdos_renyi graph needs p".into()))?;
            InteractionGraph::erdos_renyi(n, p, spec.seed.unwrap_or(run_seed)).map_err(err)?
        }
        Topology::Csv => {
            let path = spec.path.as_ref().ok_or_else(|| HarnessError::Config("csv graph needs path".into()))?;
            InteractionGraph::load_csv(path).map_err(|e| HarnessError::Config(format!("graph: {}: {e}", path.display())))?
        }
    };
    if g.n_particles() != n {
        return Err(HarnessError::Config(format!("graph has {} particles but {n} were requested", g.n_particles())));
    }
    g.with_theta(theta).map_err(err)
}
