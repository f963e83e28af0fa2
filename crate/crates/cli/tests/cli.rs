use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# a short run of every algorithm
algorithms = skeleton_sync, skeleton_async, continuous_sync, continuous_async
replicas = 1, 3
t_corr_skeleton_steps = 20
t_corr_continuous_time = 1
window_time = 0.05
t_stop_time = 500
repetitions = 2
trace_cap_records = 5
";

fn parrep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parrep")).args(args).output().expect("run parrep")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_prints_basin_weights() {
    let o = parrep(&["oracle"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("<1_W1> = 5.7314073935"), "{text}");
    let sum: f64 = text
        .lines()
        .filter_map(|l| l.split(" = ").nth(1).filter(|_| l.starts_with("<1_W")))
        .map(|v| v.parse::<f64>().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-12, "{sum}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "beta = 3\nbogus_key = 1\n");
    let o = parrep(&["speedup", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("bogus_key"), "{err}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = parrep(&["simulate", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = parrep(&["oracle", "--config", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "oracle writes nothing");
    let o = parrep(&["simulate", "--config", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = parrep(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert!(csv.starts_with("algorithm,R,beta,t_corr,dt,Dt,t_stop,seed,rep,value,std,oracle,verdict\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("skeleton_sync,1,"));
    assert_eq!(std::fs::read_to_string(out.join("trace.jsonl")).unwrap().lines().count(), 5);
    let overflow = std::fs::read_to_string(out.join("trace_overflow.jsonl")).unwrap();
    assert!(overflow.lines().count() > 0);
    assert!(out.join("simulate.json").exists());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        for cmd in ["speedup", "accuracy", "simulate"] {
            let o = parrep(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in [
        "speedup.csv",
        "speedup.json",
        "accuracy.csv",
        "accuracy.json",
        "simulate.csv",
        "trace.jsonl",
        "trace_overflow.jsonl",
    ] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let csv = std::fs::read_to_string(a.join("speedup.csv")).unwrap();
    // 4 algorithms x 2 replica counts, R = 1 rows checked against 1.
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(csv.lines().filter(|l| l.split(',').nth(1) == Some("1") && l.ends_with(",pass")).count(), 4);
}

#[test]
fn validate_exit_code_matches_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = parrep(&[
        "validate",
        "--out",
        out.to_str().unwrap(),
        "--toy-samples",
        "20000",
        "--pdmp-samples",
        "30",
    ]);
    let text = std::fs::read_to_string(out.join("validate.json")).unwrap();
    let all_pass = text.contains("\"all_pass\": true");
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 3 }), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 14);
}
