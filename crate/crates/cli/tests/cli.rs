use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seed = 5
[model]
kind = \"segment\"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
mark_bound = 0.4
rho = 5.0
nu = [0.0, -0.5]
[sampler]
burn_in = 500
thinning = 10
n_samples = 50
n_chains = 2
[estimator]
n_nodes = 200
n_inner = 4
pool_stride = 2
n_replicates = 200
targets = [\"L\", \"LN\"]
[clt]
levels = [1.0, 2.0]
replicates = 1000
n_nodes = 500
n_inner = 4
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibbs-ustat")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("c.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn partitions_to_stdout() {
    let out = run(&["partitions", "--orders", "2,1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("orders,j_vector,a,block_count"));
    assert!(text.ends_with("2 1,*,3,\n"), "{text}");
}

#[test]
fn check_passes_and_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("checks.csv");
    let out = run(&["check", "--seed", "3", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_path).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")), "{text}");
}

#[test]
fn estimate_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = run(&["estimate", "--config", &cfg, "--workers", "1"]);
    let b = run(&["estimate", "--config", &cfg, "--workers", "3"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("target,method,value,std_error,n_outer,n_inner,seed,wall_time_s,config_digest,error\n"));
    assert!(text.lines().any(|l| l.starts_with("LN,")));
    let other = run(&["estimate", "--config", &cfg, "--seed", "6"]);
    assert_ne!(other.stdout, text.as_bytes());
}

#[test]
fn sample_clt_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let trace = dir.path().join("trace.csv");
    let out = run(&["sample", "--config", &cfg, "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stdout.is_empty());
    assert!(std::fs::read_to_string(trace).unwrap().lines().count() > 1);
    let clt = run(&["clt", "--config", &cfg]);
    assert!(clt.status.success(), "{}", String::from_utf8_lossy(&clt.stderr));
    let text = String::from_utf8(clt.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("level,component,empirical_var,analytic_c,frobenius_err,ks_stat,ks_p"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("nu = [0.0, -0.5]", "nu = [0.0, 0.5]"));
    let out = run(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu2"));
    assert_eq!(run(&["estimate"]).status.code(), Some(2));
}
