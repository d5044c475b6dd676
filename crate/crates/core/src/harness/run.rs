use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, ProblemSpec, Topology, Variant};
use super::problem::{build_graph, BuiltProblem};
use super::{median_iqr, write_atomic, HarnessError};
use crate::bounds::{fluctuation_bound, smd_convex_bound, BoundInputs};
use crate::dynamics::{projected_gradient_descent, DynamicsError, Ensemble, Integrator, Schedule};
use crate::graph::InteractionGraph;
use crate::metrics::{variance_reduction_ratio, write_trace_csv, ExtraColumn, RunSummary, RunTrace, TraceRow};
use crate::mirror::{MapKind, MirrorMap};
use crate::objective::GradientNoise;
use crate::oracle::{certify_minimizer, MinimizerCertificate};

/// Per-invocation switches layered over the config.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub write_traces: bool,
    pub write_sweep_csv: bool,
    pub jobs: usize,
}

/// One grid point of an experiment, with its fully resolved config.
#[derive(Debug, Clone)]
pub struct Cell {
    /// Output subdirectory; empty for single-cell experiments.
    pub name: String,
    pub variant: Option<String>,
    pub algorithm: Algorithm,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub f_star: f64,
    pub fw_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub cell: String,
    pub algorithm: Algorithm,
    pub n_particles: usize,
    pub dim: usize,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub certificate: CertificateSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_reduction_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iid_stationary_loss_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iid_stationary_consensus_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

/// Median and interquartile range of one metric over a cell's seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: String,
    pub metric: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub name: String,
    pub reports: Vec<SeedReport>,
    pub aggregates: Vec<Aggregate>,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.reports.iter().any(|r| r.diverged.is_some())
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p")
}

fn apply_variant(base: &ExperimentConfig, v: &Variant) -> ExperimentConfig {
    let mut c = base.clone();
    if let Some(m) = v.map {
        c.map.kind = m;
    }
    if let Some(g) = v.graph {
        c.graph.kind = g;
    }
    if let Some(n) = v.n_particles {
        c.particles.n = n;
    }
    if let Some(p) = v.p {
        c.graph.p = Some(p);
    }
    if let Some(t) = v.theta {
        c.graph.theta = t;
    }
    if let Some(s) = v.batch_size {
        c.integrator.gradient_noise = GradientNoise::MiniBatch { batch_size: s };
    }
    if let Some(e) = v.eta {
        c.integrator.eta = e;
    }
    if let Some(s) = v.sigma {
        c.integrator.sigma = s;
    }
    if let ProblemSpec::LeastSquares { cond, s_max, .. } = &mut c.problem {
        if let Some(k) = v.cond {
            *cond = k;
        }
        if let Some(s) = v.s_max {
            *s_max = s;
        }
    }
    c
}

/// Expands the sweep (if any) into cells, variants outermost.
pub fn expand_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let Some(sweep) = &cfg.sweep else {
        return vec![Cell { name: String::new(), variant: None, algorithm: Algorithm::Ismd, config: cfg.clone() }];
    };
    let variants: Vec<Option<&Variant>> =
        if sweep.variants.is_empty() { vec![None] } else { sweep.variants.iter().map(Some).collect() };
    let opt = |v: &Vec<f64>| if v.is_empty() { vec![None] } else { v.iter().copied().map(Some).collect() };
    let opt_u = |v: &Vec<usize>| if v.is_empty() { vec![None] } else { v.iter().copied().map(Some).collect::<Vec<_>>() };
    let mut cells = Vec::new();
    for v in &variants {
        for n in opt_u(&sweep.n_particles) {
            for p in opt(&sweep.p) {
                for theta in opt(&sweep.theta) {
                    for s in opt_u(&sweep.batch_size) {
                        let mut c = match v {
                            Some(v) => apply_variant(cfg, v),
                            None => cfg.clone(),
                        };
                        let mut parts = Vec::new();
                        if let Some(v) = v {
                            parts.push(v.name.clone());
                        }
                        if let Some(n) = n {
                            c.particles.n = n;
                            parts.push(format!("n{n}"));
                        }
                        if let Some(p) = p {
                            c.graph.p = Some(p);
                            parts.push(format!("p{}", fmt_num(p)));
                        }
                        if let Some(t) = theta {
                            c.graph.theta = t;
                            parts.push(format!("theta{}", fmt_num(t)));
                        }
                        if let Some(s) = s {
                            c.integrator.gradient_noise = GradientNoise::MiniBatch { batch_size: s };
                            parts.push(format!("s{s}"));
                        }
                        c.sweep = None;
                        cells.push(Cell {
                            name: parts.join("_"),
                            variant: v.map(|v| v.name.clone()),
                            algorithm: v.map(|v| v.algorithm).unwrap_or_default(),
                            config: c,
                        });
                    }
                }
            }
        }
    }
    cells
}

struct SeedResult {
    report: SeedReport,
    files: Vec<(PathBuf, Vec<u8>)>,
}

fn mirror_map(cfg: &ExperimentConfig, d: usize) -> Result<MirrorMap, HarnessError> {
    MirrorMap::new(cfg.map.kind, d).scaled(cfg.map.scale).map_err(|e| HarnessError::Config(format!("map: {e}")))
}

fn certificate(cfg: &ExperimentConfig, problem: &BuiltProblem) -> Result<MinimizerCertificate, HarnessError> {
    if let Some(path) = &cfg.oracle.certificate {
        let cert = MinimizerCertificate::load(path)?;
        if cert.dim != problem.objective().dim() {
            return Err(HarnessError::Config(format!(
                "{}: certificate has dimension {}, problem has {}",
                path.display(),
                cert.dim,
                problem.objective().dim()
            )));
        }
        return Ok(cert);
    }
    Ok(certify_minimizer(problem.objective(), cfg.oracle.tolerance, cfg.oracle.max_iter)?)
}

/// `κ` for the bound columns: configured, or `η μ_f / c` for the Euclidean
/// map `∇Φ*(z) = z/c` under a constant learning rate.
fn bound_kappa(cfg: &ExperimentConfig, mu_f: f64) -> f64 {
    if let Some(k) = cfg.metrics.kappa {
        return k;
    }
    match (cfg.map.kind, cfg.integrator.eta) {
        (MapKind::Euclidean, Schedule::Constant { base }) => base * mu_f / cfg.map.scale,
        _ => 0.0,
    }
}

fn bound_columns(cfg: &ExperimentConfig, problem: &BuiltProblem, map: &MirrorMap, g: &InteractionGraph, trace: &RunTrace) -> Vec<(String, Vec<f64>)> {
    let obj = problem.objective();
    let sigma = cfg.integrator.sigma.base();
    let mut inp = BoundInputs::from_parts(obj, map, g, sigma, 1.0);
    inp.mu_f = obj.strong_convexity();
    inp.kappa = bound_kappa(cfg, inp.mu_f);
    let f0 = trace.rows.first().map(|r| r.fluct_mean_sq * trace.n_particles as f64).unwrap_or(0.0);
    let fluct = trace.rows.iter().map(|r| fluctuation_bound(&inp, r.t, f0).unwrap_or(f64::NAN)).collect();
    let smd = trace
        .rows
        .iter()
        .map(|r| {
            if r.t > 0.0 {
                smd_convex_bound(&BoundInputs { horizon: r.t, ..inp.clone() }).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            }
        })
        .collect();
    vec![("bound_fluct_mean_sq".into(), fluct), ("bound_smd_gap".into(), smd)]
}

fn trace_csv(trace: &RunTrace, wide: bool, extra: &[(String, Vec<f64>)]) -> Result<Vec<u8>, HarnessError> {
    let cols: Vec<ExtraColumn> = extra.iter().map(|(n, v)| ExtraColumn { name: n, values: v }).collect();
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf, wide, &cols).map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(buf)
}

fn integrate(
    cfg: &ExperimentConfig,
    problem: &BuiltProblem,
    map: &MirrorMap,
    g: &InteractionGraph,
    seed: u64,
    f_star: f64,
) -> Result<(RunTrace, Option<DynamicsError>), HarnessError> {
    let n = g.n_particles();
    let mut ens = Ensemble::initialize(map, n, cfg.particles.init, seed).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut integ = Integrator::new(problem.objective(), map, g, cfg.integrator.with_seed(seed))
        .map_err(|e| HarnessError::Config(format!("integrator: {e}")))?;
    match integ.run(&mut ens, cfg.metrics.stride, f_star) {
        Ok(t) => Ok((t, None)),
        Err((e @ DynamicsError::Divergence { .. }, t)) => Ok((t, Some(e))),
        Err((e, _)) => Err(HarnessError::Config(e.to_string())),
    }
}

fn pgd_trace(cfg: &ExperimentConfig, problem: &BuiltProblem, seed: u64, f_star: f64) -> RunTrace {
    let it = &cfg.integrator;
    let values = projected_gradient_descent(problem.objective(), it.eta, it.sigma, it.epsilon, it.n_steps, seed);
    let mut trace = RunTrace::new(1, f_star);
    let stride = cfg.metrics.stride as usize;
    for (k, v) in values.iter().enumerate() {
        if k % stride != 0 && k + 1 != values.len() {
            continue;
        }
        let gap = v - f_star;
        let k = k as u64;
        trace.rows.push(TraceRow {
            k,
            t: k as f64 * it.epsilon,
            eta: it.eta.value(k),
            sigma: it.sigma.value(k),
            loss_gap_mean: gap,
            loss_gaps: vec![gap],
            fluct_mean_sq: 0.0,
            fluct_mean: 0.0,
            fluct_max: 0.0,
            consensus_mean: 0.0,
            loss_at_mean: gap,
        });
    }
    trace
}

fn run_seed(cell: &Cell, seed: u64, dir: &Path, opts: &RunOptions) -> Result<SeedResult, HarnessError> {
    let cfg = &cell.config;
    let problem = BuiltProblem::build(&cfg.problem, seed)?;
    let obj = problem.objective();
    let d = obj.dim();
    let cert = certificate(cfg, &problem)?;
    let map = mirror_map(cfg, d)?;
    let n = if cell.algorithm == Algorithm::ProjectedGd { 1 } else { cfg.particles.n };
    let g = build_graph(&cfg.graph, cfg.graph.kind, n, cfg.graph.p, cfg.graph.theta, seed)?;

    let mut files = Vec::new();
    let tag = format!("seed{seed}");
    files.push((dir.join(format!("certificate_{tag}.json")), serde_json::to_vec_pretty(&cert).expect("certificate serializes")));
    if cfg.save_problem {
        if let Some(csv) = problem.to_csv() {
            files.push((dir.join(format!("problem_{tag}.csv")), csv.into_bytes()));
        }
    }

    let (trace, failure) = match cell.algorithm {
        Algorithm::Ismd => integrate(cfg, &problem, &map, &g, seed, cert.f_star)?,
        Algorithm::ProjectedGd => (pgd_trace(cfg, &problem, seed, cert.f_star), None),
    };
    let threshold = match (&cfg.metrics.threshold, trace.rows.first()) {
        (Some(t), Some(first)) => Some(t.gap_level(cert.f_star, first.loss_gap_mean)),
        _ => None,
    };
    let last = trace.last_step().unwrap_or(0);
    let burn_in = cfg.metrics.burn_in.min(last);
    let summary = RunSummary::from_trace(&trace, seed, burn_in, threshold, &g).map_err(|e| HarnessError::Io(e.to_string()))?;

    let mut report = SeedReport {
        cell: cell.name.clone(),
        algorithm: cell.algorithm,
        n_particles: n,
        dim: d,
        summary,
        certificate: CertificateSummary { f_star: cert.f_star, fw_gap: cert.fw_gap, iterations: cert.iterations },
        variance_reduction_ratio: None,
        iid_stationary_loss_variance: None,
        iid_stationary_consensus_mean: None,
        diverged: failure.as_ref().map(|e| e.to_string()),
    };

    if opts.write_traces {
        let extra = if cfg.metrics.bounds { bound_columns(cfg, &problem, &map, &g, &trace) } else { Vec::new() };
        files.push((dir.join(format!("trace_{tag}.csv")), trace_csv(&trace, cfg.metrics.wide_csv, &extra)?));
    }

    if cfg.metrics.iid_baseline && failure.is_none() && cell.algorithm == Algorithm::Ismd {
        let gi = build_graph(&cfg.graph, Topology::Independent, n, None, 1.0, seed)?;
        let (iid, iid_failure) = integrate(cfg, &problem, &map, &gi, seed, cert.f_star)?;
        if let Some(e) = iid_failure {
            report.diverged = Some(format!("i.i.d. baseline: {e}"));
        } else if burn_in <= iid.last_step().unwrap_or(0) {
            let m = |e: crate::metrics::MetricsError| HarnessError::Io(e.to_string());
            report.variance_reduction_ratio = Some(variance_reduction_ratio(&iid, &trace, burn_in).map_err(m)?);
            report.iid_stationary_loss_variance = Some(iid.pooled_loss_variance(burn_in).map_err(m)?);
            report.iid_stationary_consensus_mean = Some(iid.post_burn_in_mean(burn_in, |r| r.consensus_mean).map_err(m)?);
        }
        if opts.write_traces {
            files.push((dir.join(format!("trace_iid_{tag}.csv")), trace_csv(&iid, cfg.metrics.wide_csv, &[])?));
        }
    }
    files.push((dir.join(format!("summary_{tag}.json")), serde_json::to_vec_pretty(&report).expect("report serializes")));
    Ok(SeedResult { report, files })
}

fn aggregates(cells: &[Cell], reports: &[SeedReport]) -> Vec<Aggregate> {
    type Getter = fn(&SeedReport) -> Option<f64>;
    let metrics: [(&str, Getter); 9] = [
        ("stationary_loss_gap", |r| r.summary.stationary_loss_gap),
        ("stationary_loss_variance", |r| r.summary.stationary_loss_variance),
        ("stationary_consensus_mean", |r| r.summary.stationary_consensus_mean),
        ("final_loss_gap_mean", |r| Some(r.summary.final_loss_gap_mean)),
        ("final_loss_at_mean", |r| Some(r.summary.final_loss_at_mean)),
        // Runs that never reach the level count as +∞.
        ("time_to_threshold", |r| r.summary.threshold.map(|_| r.summary.time_to_threshold.map_or(f64::INFINITY, |k| k as f64))),
        ("communication_cost", |r| {
            r.summary.threshold.map(|_| r.summary.communication_cost.map_or(f64::INFINITY, |c| c as f64))
        }),
        ("variance_reduction_ratio", |r| r.variance_reduction_ratio),
        ("iid_stationary_consensus_mean", |r| r.iid_stationary_consensus_mean),
    ];
    let mut out = Vec::new();
    for cell in cells {
        let rs: Vec<&SeedReport> = reports.iter().filter(|r| r.cell == cell.name && r.diverged.is_none()).collect();
        for (name, get) in metrics {
            let vals: Vec<f64> = rs.iter().filter_map(|r| get(r)).collect();
            if vals.is_empty() {
                continue;
            }
            let (q1, median, q3) = median_iqr(&vals);
            out.push(Aggregate { cell: cell.name.clone(), metric: name.into(), median, q1, q3, n: vals.len() });
        }
    }
    out
}

fn sweep_csv(cells: &[Cell], aggs: &[Aggregate]) -> Result<Vec<u8>, HarnessError> {
    let by_name: BTreeMap<&str, &Cell> = cells.iter().map(|c| (c.name.as_str(), c)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| HarnessError::Io(e.to_string());
    w.write_record(["cell", "variant", "algorithm", "n_particles", "graph", "p", "theta", "batch_size", "metric", "median", "q1", "q3", "n"])
        .map_err(e)?;
    for a in aggs {
        let c = by_name[a.cell.as_str()];
        let cfg = &c.config;
        let graph = serde_json::to_value(cfg.graph.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let batch = match cfg.integrator.gradient_noise {
            GradientNoise::MiniBatch { batch_size } => batch_size.to_string(),
            _ => String::new(),
        };
        let algorithm = match c.algorithm {
            Algorithm::Ismd => "ismd",
            Algorithm::ProjectedGd => "projected_gd",
        };
        w.write_record([
            a.cell.clone(),
            c.variant.clone().unwrap_or_default(),
            algorithm.to_string(),
            cfg.particles.n.to_string(),
            graph,
            cfg.graph.p.map(|p| p.to_string()).unwrap_or_default(),
            cfg.graph.theta.to_string(),
            batch,
            a.metric.clone(),
            format!("{:e}", a.median),
            format!("{:e}", a.q1),
            format!("{:e}", a.q3),
            a.n.to_string(),
        ])
        .map_err(e)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Runs every (cell, seed) pair, writing per-seed files atomically, then the
/// resolved config and `summary.json` (plus `sweep.csv` when requested).
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let cells = expand_cells(cfg);
    let tasks: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let work = |&(c, seed): &(usize, u64)| -> Result<SeedReport, HarnessError> {
        let cell = &cells[c];
        let dir = if cell.name.is_empty() { opts.out.clone() } else { opts.out.join(&cell.name) };
        let res = run_seed(cell, seed, &dir, opts)?;
        for (path, bytes) in &res.files {
            write_atomic(path, bytes)?;
        }
        Ok(res.report)
    };
    let results: Vec<Result<SeedReport, HarnessError>> = run_tasks(&tasks, opts.jobs, work);
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        reports.push(r?);
    }
    let aggs = aggregates(&cells, &reports);
    let outcome = RunOutcome { name: cfg.name.clone(), reports, aggregates: aggs };
    write_atomic(&opts.out.join("config.resolved.toml"), cfg.to_toml().as_bytes())?;
    write_atomic(&opts.out.join("summary.json"), &serde_json::to_vec_pretty(&outcome).expect("outcome serializes"))?;
    if opts.write_sweep_csv {
        write_atomic(&opts.out.join("sweep.csv"), &sweep_csv(&cells, &outcome.aggregates)?)?;
    }
    Ok(outcome)
}

#[cfg(feature = "parallel")]
fn run_tasks<T: Sync, R: Send>(tasks: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    if jobs <= 1 {
        return tasks.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| tasks.par_iter().map(&f).collect()),
        Err(_) => tasks.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_tasks<T: Sync, R: Send>(tasks: &[T], _jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    tasks.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
name = "unit"
seeds = [3, 4]
[problem]
kind = "least_squares"
m = 12
d = 6
cond = 10.0
[map]
kind = "entropy"
[graph]
kind = "mean_field"
[particles]
n = 4
[integrator]
epsilon = 0.1
n_steps = 40
eta = {{ kind = "constant", base = 0.5 }}
sigma = {{ kind = "constant", base = 0.05 }}
[metrics]
stride = 5
burn_in = 20
{extra}"#
        ))
        .unwrap()
    }

    fn opts(dir: &Path, jobs: usize) -> RunOptions {
        RunOptions { out: dir.to_path_buf(), write_traces: true, write_sweep_csv: true, jobs }
    }

    #[test]
    fn sweep_cells_are_named_and_resolved() {
        let c = cfg("iid_baseline = true\n[sweep]\nn_particles = [1, 10]\ntheta = [0.5]\n");
        let cells = expand_cells(&c);
        let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["n1_theta0p5", "n10_theta0p5"]);
        assert_eq!(cells[1].config.particles.n, 10);
        assert_eq!(cells[1].config.graph.theta, 0.5);
        assert!(cells[1].config.sweep.is_none());
    }

    #[test]
    fn outputs_are_byte_identical_across_runs_and_jobs() {
        let c = cfg("bounds = true\niid_baseline = true\n");
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let oa = run_experiment(&c, &opts(a.path(), 1)).unwrap();
        run_experiment(&c, &opts(b.path(), 2)).unwrap();
        for f in ["trace_seed3.csv", "trace_iid_seed4.csv", "summary.json", "config.resolved.toml", "sweep.csv"] {
            let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            assert_eq!(x, y, "{f}");
        }
        let header = std::fs::read_to_string(a.path().join("trace_seed3.csv")).unwrap();
        assert!(header.starts_with(
            "k,t,eta,sigma,loss_gap_mean,fluct_mean_sq,consensus_mean,loss_at_mean,bound_fluct_mean_sq,bound_smd_gap\n"
        ));
        assert_eq!(oa.reports.len(), 2);
        assert!(oa.reports.iter().all(|r| r.variance_reduction_ratio.is_some()));
        let echoed = ExperimentConfig::parse(&std::fs::read_to_string(a.path().join("config.resolved.toml")).unwrap()).unwrap();
        assert_eq!(echoed, c);
    }

    #[test]
    fn projected_gd_variant_runs_single_trajectory() {
        let c = cfg("[sweep]\n[[sweep.variants]]\nname = \"gd\"\nalgorithm = \"projected_gd\"\nmap = \"euclidean\"\n[[sweep.variants]]\nname = \"md\"\n");
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, &opts(dir.path(), 1)).unwrap();
        let gd: Vec<&SeedReport> = out.reports.iter().filter(|r| r.cell == "gd").collect();
        assert_eq!(gd.len(), 2);
        assert!(gd.iter().all(|r| r.n_particles == 1 && r.summary.final_consensus_mean == 0.0));
        assert!(dir.path().join("md/trace_seed4.csv").exists());
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = cfg("");
        c.integrator.eta = Schedule::constant(1e12);
        c.integrator.sigma = Schedule::constant(0.0);
        c.map.kind = MapKind::Euclidean;
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, &opts(dir.path(), 1)).unwrap();
        assert!(out.diverged());
        assert!(dir.path().join("trace_seed3.csv").exists());
    }

    #[test]
    fn threshold_levels() {
        let c = cfg("[metrics.threshold]\ngap_fraction = 0.5\n");
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, &opts(dir.path(), 1)).unwrap();
        for r in &out.reports {
            let level = r.summary.threshold.unwrap();
            assert!(level > 0.0);
            assert_eq!(r.summary.communication_cost, r.summary.time_to_threshold.map(|k| k * 12));
        }
    }
}
