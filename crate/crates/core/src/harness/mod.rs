//! Config-driven experiment runner: problem construction, seeds and sweeps,
//! certificates, trace and summary files, and the verification suite.

mod config;
mod problem;
mod run;
pub mod verify;

use std::path::Path;

use thiserror::Error;

pub use config::{
    Algorithm, ExperimentConfig, GraphSpec, IntegratorSpec, MapSpec, MetricsSpec, OracleSpec, ParticleSpec, ProblemSpec,
    SweepSpec, ThresholdSpec, Topology, Variant,
};
pub use problem::{build_graph, load_problem_csv, BuiltProblem};
pub use run::{expand_cells, run_experiment, Aggregate, Cell, RunOptions, RunOutcome, SeedReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Certification(String),
}

impl HarnessError {
    /// Process exit code: 1 validation, 2 divergence, 3 certification.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 1,
            HarnessError::Divergence(_) => 2,
            HarnessError::Certification(_) => 3,
        }
    }
}

impl From<crate::oracle::OracleError> for HarnessError {
    fn from(e: crate::oracle::OracleError) -> Self {
        use crate::oracle::OracleError;
        match e {
            OracleError::NotCertified { .. } | OracleError::Singular(_) | OracleError::Residual(_) => {
                HarnessError::Certification(e.to_string())
            }
            OracleError::Io(_) | OracleError::Json(_) => HarnessError::Io(e.to_string()),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if w == 0.0 || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// `(q1, median, q3)`.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median_iqr(&[3.0, 1.0, 2.0]), (1.5, 2.0, 2.5));
        assert_eq!(median_iqr(&[4.0, 1.0, 3.0, 2.0]).1, 2.5);
        assert_eq!(median_iqr(&[1.0, f64::INFINITY, 2.0]).1, 2.0);
        assert_eq!(median_iqr(&[f64::INFINITY; 4]), (f64::INFINITY, f64::INFINITY, f64::INFINITY));
        assert_eq!(median_iqr(&[1.0, f64::INFINITY]).2, f64::INFINITY);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
