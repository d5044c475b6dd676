use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ismd::dynamics::Schedule;
use ismd::graph::InteractionGraph;
use ismd::harness::verify::{check_graph_csv, run_suite};
use ismd::harness::{
    build_graph, load_problem_csv, run_experiment, write_atomic, BuiltProblem, ExperimentConfig, HarnessError, RunOptions,
};
use ismd::mirror::MapKind;
use ismd::objective::Normalization;
use ismd::oracle::{certify_minimizer, ou_stationary};
use serde_json::json;

mod shipped;

#[derive(Parser)]
#[command(name = "ismd", version, about = "Interacting stochastic mirror descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over its seeds, writing traces and summaries.
    Run {
        /// Config file, or the name of a shipped config.
        config: Option<String>,
        /// List the shipped configs.
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a sweep and write the long-format `sweep.csv`.
    Sweep {
        config: String,
        #[command(flatten)]
        common: Common,
        /// Also write per-seed trace CSVs.
        #[arg(long)]
        traces: bool,
    },
    /// Certify the minimizer of a problem (config or problem CSV).
    Oracle {
        problem: String,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Normalization for least-squares CSVs.
        #[arg(long, default_value = "mean")]
        normalization: String,
        /// Also write the Ornstein–Uhlenbeck stationary law for the config.
        #[arg(long)]
        ou: bool,
    },
    /// Run the invariant suite; optionally check an interaction matrix CSV.
    Verify {
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Print spectral and communication statistics of an interaction graph.
    GraphInfo {
        /// Config file or shipped config name.
        config: Option<String>,
        /// Interaction matrix CSV instead of a config.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Seeds to run instead of the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add bound-envelope columns to the traces.
    #[arg(long)]
    bounds: bool,
    /// Per-particle loss columns in the traces.
    #[arg(long)]
    wide_csv: bool,
    /// Worker threads over (cell, seed) pairs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load_config(arg: &str) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    let name = arg.strip_suffix(".toml").unwrap_or(arg);
    match shipped::get(name) {
        Some(text) => ExperimentConfig::parse(text).map_err(|e| HarnessError::Config(format!("{name}: {e}"))),
        None => Err(HarnessError::Config(format!("{arg}: no such file or shipped config (see `ismd run --list`)"))),
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) -> PathBuf {
    if !c.seed.is_empty() {
        cfg.seeds = c.seed.clone();
    }
    cfg.metrics.bounds |= c.bounds;
    cfg.metrics.wide_csv |= c.wide_csv;
    c.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results").join(&cfg.name))
}

fn run(config: &str, common: &Common, sweep: Option<bool>) -> Result<ExitCode, HarnessError> {
    let mut cfg = load_config(config)?;
    if sweep.is_some() && cfg.sweep.is_none() {
        return Err(HarnessError::Config(format!("{config}: no [sweep] section")));
    }
    let out = apply_common(&mut cfg, common);
    let opts = RunOptions {
        out: out.clone(),
        write_traces: sweep.unwrap_or(true),
        write_sweep_csv: cfg.sweep.is_some(),
        jobs: common.jobs.max(1),
    };
    let outcome = run_experiment(&cfg, &opts)?;
    for a in &outcome.aggregates {
        let cell = if a.cell.is_empty() { "-" } else { &a.cell };
        println!("{cell:<24} {:<30} {:>12.5e}  [{:.5e}, {:.5e}]  n={}", a.metric, a.median, a.q1, a.q3, a.n);
    }
    println!("wrote {}", out.display());
    if outcome.diverged() {
        for r in outcome.reports.iter().filter(|r| r.diverged.is_some()) {
            eprintln!("divergence: cell `{}` seed {}: {}", r.cell, r.summary.seed, r.diverged.as_deref().unwrap_or(""));
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(problem: &str, seeds: &[u64], out: Option<PathBuf>, normalization: &str, ou: bool) -> Result<ExitCode, HarnessError> {
    let out = out.unwrap_or_else(|| PathBuf::from("."));
    if problem.ends_with(".csv") {
        let norm = match normalization {
            "mean" => Normalization::Mean,
            "sum" => Normalization::Sum,
            other => return Err(HarnessError::Config(format!("unknown normalization `{other}` (mean or sum)"))),
        };
        let p = load_problem_csv(Path::new(problem), norm)?;
        let cert = certify_minimizer(p.objective(), 1e-10, ismd::oracle::DEFAULT_MAX_ITER)?;
        let path = out.join("certificate.json");
        write_atomic(&path, serde_json::to_string_pretty(&cert).expect("certificate serializes").as_bytes())?;
        println!("f* = {:.12e}  gap {:.2e}  -> {}", cert.f_star, cert.fw_gap, path.display());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(problem)?;
    let seeds = if seeds.is_empty() { cfg.seeds.clone() } else { seeds.to_vec() };
    for seed in seeds {
        let p = BuiltProblem::build(&cfg.problem, seed)?;
        let cert = certify_minimizer(p.objective(), cfg.oracle.tolerance, cfg.oracle.max_iter)?;
        let path = out.join(format!("certificate_seed{seed}.json"));
        write_atomic(&path, serde_json::to_string_pretty(&cert).expect("certificate serializes").as_bytes())?;
        println!("seed {seed}: f* = {:.12e}  gap {:.2e}  -> {}", cert.f_star, cert.fw_gap, path.display());
        if ou {
            let (Schedule::Constant { base: eta }, Schedule::Constant { base: sigma }) = (cfg.integrator.eta, cfg.integrator.sigma) else {
                return Err(HarnessError::Config("--ou needs constant eta and sigma schedules".into()));
            };
            if cfg.map.kind != MapKind::Euclidean || cfg.map.scale != 1.0 {
                return Err(HarnessError::Config("--ou needs the unit euclidean map".into()));
            }
            let g = build_graph(&cfg.graph, cfg.graph.kind, cfg.particles.n, cfg.graph.p, cfg.graph.theta, seed)?;
            let st = ou_stationary(&p.as_quadratic()?, &g, sigma, eta)?;
            let doc = json!({
                "n_particles": st.n_particles,
                "eta": eta,
                "sigma": sigma,
                "mean": st.mean.iter().copied().collect::<Vec<f64>>(),
                "covariance": st.covariance_rows(),
                "covariance_trace": st.covariance.trace(),
                "mean_square_fluctuation": st.mean_square_fluctuation(),
                "residual": st.residual,
            });
            let path = out.join(format!("ou_seed{seed}.json"));
            write_atomic(&path, serde_json::to_string_pretty(&doc).expect("json serializes").as_bytes())?;
            println!("seed {seed}: OU trace {:.6e}  -> {}", st.covariance.trace(), path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(graph: Option<PathBuf>) -> ExitCode {
    let mut core_failed = false;
    for r in run_suite(None) {
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        core_failed |= !r.passed;
    }
    let mut graph_failed = false;
    if let Some(p) = graph {
        let r = check_graph_csv(&p);
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        graph_failed = !r.passed;
    }
    if core_failed {
        ExitCode::from(3)
    } else if graph_failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn graph_info(config: Option<String>, graph: Option<PathBuf>, seed: Option<u64>) -> Result<ExitCode, HarnessError> {
    let g = match (config, graph) {
        (_, Some(path)) => InteractionGraph::load_csv(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
        (Some(c), None) => {
            let cfg = load_config(&c)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let p = cfg.graph.p.or_else(|| cfg.sweep.as_ref().and_then(|s| s.p.first().copied()));
            build_graph(&cfg.graph, cfg.graph.kind, cfg.particles.n, p, cfg.graph.theta, seed)?
        }
        (None, None) => return Err(HarnessError::Config("graph-info needs a config or --graph".into())),
    };
    let doc = json!({
        "kind": format!("{:?}", g.kind()),
        "n_particles": g.n_particles(),
        "theta": g.theta(),
        "connected": g.is_connected(),
        "algebraic_connectivity": g.lambda_min_unscaled(),
        "laplacian_norm": g.laplacian_norm(),
        "messages_per_round": g.messages_per_round(),
        "max_row_sum_error": g.max_row_sum_error(),
        "max_col_sum_error": g.max_col_sum_error(),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("json serializes"));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { list: true, .. } => {
            for (name, desc) in shipped::list() {
                println!("{name:<22} {desc}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config: Some(c), common, .. } => run(&c, &common, None),
        Command::Run { config: None, .. } => Err(HarnessError::Config("run needs a config (or --list)".into())),
        Command::Sweep { config, common, traces } => run(&config, &common, Some(traces)),
        Command::Oracle { problem, seed, out, normalization, ou } => oracle(&problem, &seed, out, &normalization, ou),
        Command::Verify { graph } => Ok(verify(graph)),
        Command::GraphInfo { config, graph, seed } => graph_info(config, graph, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
