use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dynamics::{Init, IntegratorConfig, Schedule};
use crate::exec::Execution;
use crate::mirror::MapKind;
use crate::objective::{GradientNoise, Normalization, TrafficTarget};
use crate::oracle::DEFAULT_MAX_ITER;

/// One experiment: a problem family, a particle system and what to record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Also write each generated problem as CSV.
    #[serde(default)]
    pub save_problem: bool,
    pub problem: ProblemSpec,
    pub map: MapSpec,
    pub graph: GraphSpec,
    pub particles: ParticleSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn one() -> f64 {
    1.0
}

/// Problem instance. Generated families take `seed` from the run seed unless
/// pinned here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    LeastSquares {
        m: usize,
        d: usize,
        cond: f64,
        #[serde(default = "one")]
        s_max: f64,
        #[serde(default)]
        normalization: Normalization,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Traffic {
        n: usize,
        r_max: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<TrafficTarget>,
        #[serde(default = "one")]
        congestion: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// `½xᵀQx + cᵀx`, rows of `Q` listed in order.
    Quadratic { q: Vec<Vec<f64>>, c: Vec<f64> },
    LeastSquaresCsv {
        path: PathBuf,
        #[serde(default)]
        normalization: Normalization,
    },
    TrafficCsv { path: PathBuf },
}

impl ProblemSpec {
    /// Whether the instance changes with the run seed.
    pub fn is_seeded(&self) -> bool {
        matches!(self, ProblemSpec::LeastSquares { seed: None, .. } | ProblemSpec::Traffic { seed: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub kind: MapKind,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    MeanField,
    Independent,
    ErdosRenyi,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: Topology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Graph seed for random topologies; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "one")]
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub n: usize,
    #[serde(default)]
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub epsilon: f64,
    pub eta: Schedule,
    pub sigma: Schedule,
    pub n_steps: u64,
    #[serde(default)]
    pub gradient_noise: GradientNoise,
    #[serde(default)]
    pub execution: Execution,
}

impl IntegratorSpec {
    pub fn with_seed(&self, seed: u64) -> IntegratorConfig {
        IntegratorConfig {
            epsilon: self.epsilon,
            eta: self.eta,
            sigma: self.sigma,
            n_steps: self.n_steps,
            seed,
            gradient_noise: self.gradient_noise,
            execution: self.execution,
        }
    }
}

/// Stopping level for time-to-threshold. Exactly one field is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    /// Absolute loss value `f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Absolute gap `f − f*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// Fraction of the gap at the initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_fraction: Option<f64>,
}

impl ThresholdSpec {
    /// The level on the mean loss gap.
    pub fn gap_level(&self, f_star: f64, initial_gap: f64) -> f64 {
        match (self.loss, self.gap, self.gap_fraction) {
            (Some(l), _, _) => l - f_star,
            (_, Some(g), _) => g,
            (_, _, Some(r)) => r * initial_gap,
            _ => f64::NAN,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let set = [self.loss, self.gap, self.gap_fraction].iter().filter(|v| v.is_some()).count();
        if set != 1 {
            return Err(HarnessError::Config("metrics.threshold needs exactly one of loss, gap, gap_fraction".into()));
        }
        if let Some(r) = self.gap_fraction {
            if !(r > 0.0 && r < 1.0) {
                return Err(HarnessError::Config(format!("metrics.threshold.gap_fraction must lie in (0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default)]
    pub wide_csv: bool,
    #[serde(default)]
    pub bounds: bool,
    /// Strong-convexity rate of the mirror dynamics used by the bound
    /// columns; derived from the objective for the Euclidean map when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSpec>,
    /// Also run the same number of non-interacting replicas.
    #[serde(default)]
    pub iid_baseline: bool,
}

fn default_stride() -> u64 {
    10
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { burn_in: 0, stride: default_stride(), wide_csv: false, bounds: false, kappa: None, threshold: None, iid_baseline: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Reuse a stored certificate instead of solving (fixed problems only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<PathBuf>,
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { tolerance: default_tolerance(), max_iter: default_max_iter(), certificate: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// The particle system itself (MD, SMD, IMD and ISMD as special cases).
    #[default]
    Ismd,
    /// Euclidean projection baseline; single trajectory.
    ProjectedGd,
}

/// A named cell overriding parts of the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Schedule>,
    /// Least-squares condition number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<f64>,
    /// Least-squares largest singular value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
}

/// Cartesian grid over the listed axes, optionally crossed with variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_particles: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_size: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("invalid JSON config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::Config(format!("invalid TOML config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative input paths relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.problem {
            ProblemSpec::LeastSquaresCsv { path, .. } | ProblemSpec::TrafficCsv { path } => fix(path),
            _ => {}
        }
        if let Some(p) = &mut self.graph.path {
            fix(p);
        }
        if let Some(p) = &mut self.oracle.certificate {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config types serialize to TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        match &self.problem {
            ProblemSpec::Traffic { radius, target, .. } => {
                if radius.is_some() == target.is_some() {
                    return bad("traffic problem needs exactly one of radius, target".into());
                }
            }
            ProblemSpec::Quadratic { q, c } => {
                if q.len() != c.len() || q.iter().any(|r| r.len() != c.len()) {
                    return bad(format!("quadratic problem: q must be {0}x{0} to match c", c.len()));
                }
            }
            _ => {}
        }
        if !(self.map.scale > 0.0 && self.map.scale.is_finite()) {
            return bad(format!("map.scale must be positive, got {}", self.map.scale));
        }
        self.validate_graph(self.graph.kind, self.graph.p)?;
        if !(self.graph.theta > 0.0 && self.graph.theta.is_finite()) {
            return bad(format!("graph.theta must be positive, got {}", self.graph.theta));
        }
        if self.particles.n == 0 {
            return bad("particles.n must be at least 1".into());
        }
        self.integrator
            .with_seed(0)
            .validate()
            .map_err(|e| HarnessError::Config(format!("integrator: {e}")))?;
        if self.metrics.stride == 0 {
            return bad("metrics.stride must be at least 1".into());
        }
        if self.metrics.burn_in > self.integrator.n_steps {
            return bad(format!("metrics.burn_in ({}) exceeds integrator.n_steps ({})", self.metrics.burn_in, self.integrator.n_steps));
        }
        if let Some(t) = &self.metrics.threshold {
            t.validate()?;
        }
        if !(self.oracle.tolerance > 0.0) {
            return bad(format!("oracle.tolerance must be positive, got {}", self.oracle.tolerance));
        }
        if self.oracle.certificate.is_some() && self.problem.is_seeded() {
            return bad("oracle.certificate requires a fixed problem (pin problem.seed or load it from CSV)".into());
        }
        if let Some(s) = &self.sweep {
            if s.n_particles.contains(&0) {
                return bad("sweep.n_particles entries must be at least 1".into());
            }
            if !s.p.is_empty() && self.graph.kind != Topology::ErdosRenyi {
                return bad("sweep.p requires graph.kind = \"erdos_renyi\"".into());
            }
            let mut names = std::collections::BTreeSet::new();
            for v in &s.variants {
                if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return bad(format!("variant name `{}` must be non-empty and use [A-Za-z0-9_-]", v.name));
                }
                if !names.insert(v.name.clone()) {
                    return bad(format!("duplicate variant name `{}`", v.name));
                }
                self.validate_graph(v.graph.unwrap_or(self.graph.kind), v.p.or(self.graph.p))?;
                if (v.cond.is_some() || v.s_max.is_some()) && !matches!(self.problem, ProblemSpec::LeastSquares { .. }) {
                    return bad(format!("variant `{}`: cond and s_max apply to least_squares problems only", v.name));
                }
            }
        }
        Ok(())
    }

    fn validate_graph(&self, kind: Topology, p: Option<f64>) -> Result<(), HarnessError> {
        match kind {
            Topology::ErdosRenyi if p.is_none() && self.sweep.as_ref().is_none_or(|s| s.p.is_empty()) => {
                Err(HarnessError::Config("erdos_renyi graph needs p".into()))
            }
            Topology::Csv if self.graph.path.is_none() => Err(HarnessError::Config("csv graph needs path".into())),
            _ => Ok(()),
        }
    }
}
