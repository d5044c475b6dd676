use std::path::Path;
use std::process::{Command, Output};

fn ismd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ismd")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const SMALL: &str = r#"
name = "small"
seeds = [1, 2]
save_problem = true

[problem]
kind = "least_squares"
m = 16
d = 8
cond = 10.0

[map]
kind = "entropy"

[graph]
kind = "csv"
path = "graph.csv"

[particles]
n = 3

[integrator]
epsilon = 0.1
n_steps = 60
eta = { kind = "constant", base = 0.5 }
sigma = { kind = "constant", base = 0.1 }

[metrics]
stride = 5
burn_in = 30
"#;

fn setup(dir: &Path) {
    std::fs::write(dir.join("graph.csv"), "0.5,0.25,0.25\n0.25,0.5,0.25\n0.25,0.25,0.5\n").unwrap();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn list_enumerates_shipped_configs() {
    let dir = tempfile::tempdir().unwrap();
    let o = ismd(&["run", "--list"], dir.path());
    assert!(o.status.success());
    let s = text(&o);
    for name in ["fig1", "fig2", "fig3", "fig4", "fig5", "fig7", "fig8", "table1", "table2", "traffic_md_gd", "traffic_paths"] {
        assert!(s.lines().any(|l| l.starts_with(name)), "{name} missing from\n{s}");
    }
}

#[test]
fn run_is_byte_identical_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    for out in ["a", "b"] {
        let o = ismd(&["run", "small.toml", "--out", out, "--bounds", "--wide-csv"], dir.path());
        assert!(o.status.success(), "{}", text(&o));
    }
    for f in ["trace_seed1.csv", "trace_seed2.csv", "summary_seed1.json", "summary.json", "config.resolved.toml", "problem_seed2.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let trace = std::fs::read_to_string(dir.path().join("a/trace_seed1.csv")).unwrap();
    assert!(trace.starts_with("k,t,eta,sigma,loss_gap_mean,loss_gap_p00,loss_gap_p01,loss_gap_p02,fluct_mean_sq,consensus_mean,loss_at_mean,bound_fluct_mean_sq,bound_smd_gap\n"), "{trace}");
    let echoed = std::fs::read_to_string(dir.path().join("a/config.resolved.toml")).unwrap();
    assert!(echoed.contains("bounds = true") && echoed.contains("wide_csv = true"));

    let o = ismd(&["run", "small.toml", "--out", "c", "--seed", "2"], dir.path());
    assert!(o.status.success());
    assert!(!dir.path().join("c/trace_seed1.csv").exists());
    let c = std::fs::read(dir.path().join("c/trace_seed2.csv")).unwrap();
    assert!(!c.is_empty());
}

#[test]
fn problem_csv_certifies_to_the_same_minimum() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert!(ismd(&["run", "small.toml", "--out", "r"], dir.path()).status.success());
    let o = ismd(&["oracle", "r/problem_seed1.csv", "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let cert: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/certificate.json")).unwrap()).unwrap();
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/certificate_seed1.json")).unwrap()).unwrap();
    let (a, b) = (cert["f_star"].as_f64().unwrap(), run["f_star"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"name": "j", "seeds": [0],
        "problem": {"kind": "quadratic", "q": [[2.0, 0.0], [0.0, 1.0]], "c": [0.0, 0.1]},
        "map": {"kind": "euclidean"}, "graph": {"kind": "mean_field"}, "particles": {"n": 2},
        "integrator": {"epsilon": 0.01, "n_steps": 20, "eta": {"kind": "constant", "base": 1.0},
                       "sigma": {"kind": "constant", "base": 0.2}}}"#;
    std::fs::write(dir.path().join("j.json"), cfg).unwrap();
    let o = ismd(&["run", "j.json", "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let o = ismd(&["oracle", "j.json", "--ou", "--out", "ou"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ou/ou_seed0.json")).unwrap()).unwrap();
    assert_eq!(doc["covariance"].as_array().unwrap().len(), 4);
}

#[test]
fn validation_errors_exit_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let bad = SMALL.replace("burn_in = 30", "burn_in = 30\nbrun_in = 3");
    std::fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let o = ismd(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let s = text(&o);
    assert!(s.contains("brun_in") && s.contains("line"), "{s}");
    assert_eq!(ismd(&["run", "no_such_config"], dir.path()).status.code(), Some(1));
    assert_eq!(ismd(&["run", "--bogus"], dir.path()).status.code(), Some(1));
}

#[test]
fn corrupted_graph_fails_verify_and_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "0.5,0.5,0.1\n0.5,0.5,0\n0,0,1\n").unwrap();
    let o = ismd(&["verify", "--graph", "a.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let s = text(&o);
    assert!(s.contains("FAIL graph_csv") && s.contains("row 0 sums to 1.1"), "{s}");
    assert!(s.lines().filter(|l| l.starts_with("PASS")).count() >= 6, "{s}");
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = SMALL
        .replace("kind = \"entropy\"", "kind = \"euclidean\"")
        .replace("base = 0.5", "base = 1e12");
    std::fs::write(dir.path().join("div.toml"), cfg).unwrap();
    let o = ismd(&["run", "div.toml", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(dir.path().join("d/trace_seed1.csv").exists());
}

#[test]
fn certification_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = format!("{SMALL}\n[oracle]\ntolerance = 1e-14\nmax_iter = 1\n");
    std::fs::write(dir.path().join("cert.toml"), cfg).unwrap();
    assert_eq!(ismd(&["run", "cert.toml"], dir.path()).status.code(), Some(3));
    assert_eq!(ismd(&["oracle", "cert.toml"], dir.path()).status.code(), Some(3));
}

#[test]
fn sweep_writes_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = SMALL.replace("kind = \"csv\"\npath = \"graph.csv\"", "kind = \"erdos_renyi\"") + "\n[sweep]\np = [0.5, 1.0]\nn_particles = [3, 4]\n";
    std::fs::write(dir.path().join("sw.toml"), cfg).unwrap();
    let o = ismd(&["sweep", "sw.toml", "--out", "s", "--jobs", "2"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert!(csv.starts_with("cell,variant,algorithm,n_particles,graph,p,theta,batch_size,metric,median,q1,q3,n\n"));
    assert!(csv.contains("n4_p0p5,,ismd,4,erdos_renyi,0.5,"), "{csv}");
    assert!(!dir.path().join("s/n3_p1/trace_seed1.csv").exists());
    let info = ismd(&["graph-info", "sw.toml", "--seed", "1"], dir.path());
    assert!(text(&info).contains("messages_per_round"));
}
