use std::path::Path;
use std::process::{Command, Output};

fn tvws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvws")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Header and first record, keyed by column.
fn first_record(text: &str) -> Vec<(String, String)> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# tvws-market csv schema"));
    let header = lines.next().unwrap().split(',').map(String::from);
    let row = lines.next().unwrap().split(',').map(String::from);
    header.zip(row).collect()
}

fn field(rec: &[(String, String)], key: &str) -> String {
    rec.iter().find(|(k, _)| k == key).unwrap().1.clone()
}

#[test]
fn equilibrium_row() {
    let o = tvws(&["equilibrium", "--p-l", "2", "--p-a", "0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let rec = first_record(&stdout(&o));
    let eta_l: f64 = field(&rec, "eta_l").parse().unwrap();
    assert!((eta_l - 0.6054608).abs() < 1e-7);
    assert_eq!(field(&rec, "branch"), "AdvancedActive");
}

#[test]
fn equilibrium_trace_ends_at_fixed_point() {
    let o = tvws(&["equilibrium", "--p-l", "2", "--p-a", "0.3", "--trace"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap() == "iter,eta_l,eta_a,residual");
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!(last[3] <= 1e-12);
}

#[test]
fn config_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "beta2 = 1.0\ngamma2 = 0.6\n");
    let out = dir.path().join("eq.csv");
    let o = tvws(&["--config", &cfg, "--out", out.to_str().unwrap(), "equilibrium", "--p-l", "2", "--p-a", "0.2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let rec = first_record(&std::fs::read_to_string(out).unwrap());
    // beta2 = alpha2 makes the gain constant, so shares are closed form.
    let eta_a: f64 = field(&rec, "eta_a").parse().unwrap();
    assert!(eta_a > 0.0);
}

#[test]
fn compete_and_trace() {
    let o = tvws(&["compete", "--scheme", "rss:0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let rec = first_record(&stdout(&o));
    assert_eq!(field(&rec, "converged"), "true");
    assert_eq!(field(&rec, "interior"), "true");
    let o = tvws(&["compete", "--scheme", "wps:0.5", "--trace"]);
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1), Some("round,eta_l,eta_a"));
    assert_eq!(text.lines().nth(2), Some("0,0,1"));
}

#[test]
fn bargain_row() {
    let o = tvws(&["bargain", "--scheme", "rss", "--grid-steps", "51"]);
    assert_eq!(o.status.code(), Some(0));
    let rec = first_record(&stdout(&o));
    let delta: f64 = field(&rec, "value").parse().unwrap();
    assert!((delta - 0.6858).abs() < 1e-3);
    assert_eq!(field(&rec, "feasible"), "true");
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let args = ["sweep", "--parameter", "cost_leasing", "--range", "0.5:0.7:0.1", "--schemes", "third_party,pure_info", "--columns", "value,scheme,u_sl,u_db"];
    let a = tvws(&args);
    let b = tvws(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().nth(1), Some("value,scheme,u_sl,u_db"));
    assert_eq!(text.lines().count(), 2 + 6);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(tvws(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tvws(&["compete", "--scheme", "rss:1.5"]).status.code(), Some(1));
    assert_eq!(tvws(&["bargain", "--scheme", "xyz"]).status.code(), Some(1));
    assert_eq!(tvws(&["sweep", "--parameter", "lambda", "--range", "1:0:0.1"]).status.code(), Some(1));
    assert_eq!(tvws(&["--config", "/nonexistent.toml", "validate"]).status.code(), Some(1));
    assert_eq!(tvws(&["--help"]).status.code(), Some(0));
}

#[test]
fn oscillating_dynamics_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "osc.json",
        r#"{"beta1": 0.5713718381237508, "gamma1": 0.30469905900730104, "beta2": 0.5295974392324128,
            "gamma2": 0.4325011699161248, "q_leasing": 2.5237694266829456}"#,
    );
    let o = tvws(&["--config", &cfg, "equilibrium", "--p-l", "2.2539851501693478", "--p-a", "0.830158479793663", "--trace"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validation_failure_exit_three() {
    // With leasing worth less than the basic service the oracle checks break.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "q_leasing = 1.2\n");
    let o = tvws(&["--config", &cfg, "validate"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mc_oracle_curves() {
    let o = tvws(&["--seed", "3", "mc-oracle", "--channels", "4", "--samples", "20000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1), Some("curve,share,mean_rate,stderr"));
    assert_eq!(text.lines().filter(|l| l.starts_with("basic_rate")).count(), 10);
    assert_eq!(text.lines().filter(|l| l.starts_with("information_gain")).count(), 9);
}

#[test]
fn benchmarks_rows_per_scheme() {
    let o = tvws(&["benchmarks", "--c-s", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let schemes: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(schemes, ["rss", "wps", "coordination", "pure_info", "third_party", "sensing", "sensing_wps"]);
    assert!(text.lines().skip(2).all(|l| l.ends_with(',')), "no row should carry an error");

    let o = tvws(&["benchmarks", "--sensing-g1", "9"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().last().unwrap().contains("ordering"));
}
