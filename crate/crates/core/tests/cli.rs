use std::path::Path;
use std::process::{Command, Output};

fn relaxdice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaxdice")).args(args).output().expect("spawn relaxdice")
}

fn ok(args: &[&str]) -> String {
    let out = relaxdice(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let out = relaxdice(&["eval", "--set", "colour=blue"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn eval_prints_csv_with_fixed_header() {
    let stdout = ok(&["eval", "--set", "seeds=4", "--set", "level=L1"]);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("env,level,variant,alpha,beta_mode,seed,raw_return,normalized_score,wall_seconds"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["gridworld", "L1", "relaxdice"]);
    assert_eq!(row[5], "4");
    assert_eq!(row[8], "0");
}

#[test]
fn train_then_score_saved_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("train");
    ok(&["gen-data", "--set", "level=L2", "--seed", "1", "--out", s(&data)]);
    ok(&[
        "train",
        "--expert",
        s(&data.join("expert.rdxd")),
        "--suboptimal",
        s(&data.join("suboptimal.rdxd")),
        "--mdp",
        s(&data.join("mdp.rdxm")),
        "--variant",
        "relaxdice-drc",
        "--beta",
        "fixed:2",
        "--out",
        s(&out),
    ]);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);
    let report = ok(&["eval", "--policy", s(&out.join("policy.csv"))]);
    let norm: f64 = report.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(norm > 50.0, "{report}");
}

#[test]
fn sweep_writes_csv_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "sweep",
        "--set",
        "seeds=0,1",
        "--levels",
        "L4",
        "--methods",
        "relaxdice,bc",
        "--alphas",
        "0.1,0.5",
        "--out",
        s(tmp.path()),
    ]);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    let svg = std::fs::read_to_string(tmp.path().join("sweep_L4.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    assert!(std::fs::read_to_string(tmp.path().join("config.txt")).unwrap().starts_with("# config hash"));
}

#[test]
fn continuous_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--set", "env=pointmass", "--set", "n_random=400", "--set", "expert_data=200", "--out", s(&data)]);
    let out = tmp.path().join("train");
    ok(&[
        "train",
        "--expert",
        s(&data.join("expert.rdxd")),
        "--suboptimal",
        s(&data.join("suboptimal.rdxd")),
        "--steps",
        "30",
        "--out",
        s(&out),
    ]);
    for f in ["omega.csv", "trace.csv", "values.rdxn", "policy.rdxn"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}
