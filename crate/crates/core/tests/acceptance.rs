//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use relaxdice::oracles::GridSpec;
use relaxdice::verify::{self, Check};

// The checks are CPU-bound; running them one at a time keeps the timing
// budgets meaningful.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, check: &Check, budget: Option<Duration>) {
    let over = budget.filter(|b| check.elapsed > *b);
    let passed = check.passed && over.is_none();
    let mut line = format!(
        "criterion {n:>2} [{}] {}: {} ({:.1}s",
        if passed { "PASS" } else { "FAIL" },
        check.name,
        check.detail,
        check.elapsed.as_secs_f64()
    );
    if let Some(b) = budget {
        line.push_str(&format!(", budget {}s", b.as_secs()));
    }
    line.push_str(")\n");
    // Bypasses the test harness's output capture so the verdict always shows.
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(passed, "{line}");
}

fn run(n: u32, budget: Option<Duration>, f: impl FnOnce() -> Check) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    report(n, &f(), budget);
}

#[test]
fn criterion_01_relaxed_closed_form() {
    run(1, Some(Duration::from_secs(60)), || verify::closed_form_against_grid(false, 1000, GridSpec::default(), 1));
}

#[test]
fn criterion_02_corrected_closed_form() {
    run(2, Some(Duration::from_secs(60)), || verify::closed_form_against_grid(true, 1000, GridSpec::default(), 2));
}

#[test]
fn criterion_03_branch_continuity() {
    run(3, None, || verify::branch_continuity(1000, 3));
}

#[test]
fn criterion_04_relaxed_divergence_zero_iff() {
    run(4, None, || verify::relaxed_zero_iff(10_000, 100, 4));
}

#[test]
fn criterion_05_bellman_flow() {
    run(5, None, || verify::bellman_flow(20, 1_000_000, 5));
}

#[test]
fn criterion_06_gradients() {
    run(6, None, || verify::gradient_suite(6));
}

#[test]
fn criterion_07_convexity_and_duality() {
    run(7, None, || verify::convexity_and_duality(20, 7));
}

#[test]
fn criterion_08_demodice_special_case() {
    run(8, None, || verify::demodice_special_case(8));
}

#[test]
fn criterion_09_trend() {
    run(9, Some(Duration::from_secs(15 * 60)), || verify::trend(&verify::trend_config()).0);
}

#[test]
fn criterion_10_identical_data_sanity() {
    run(10, None, || verify::identical_data_sanity(&verify::sanity_config()));
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_relaxdice")).args(args).output().expect("spawn relaxdice");
    assert!(out.status.success(), "relaxdice {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn criterion_11_cli_determinism() {
    run(11, None, || {
        let start = Instant::now();
        let tmp = tempfile::tempdir().expect("tempdir");
        let root = tmp.path();
        let config = root.join("run.cfg");
        std::fs::write(&config, "level = L2\nseeds = 0,1,2\nvariant = relaxdice\nalpha = 0.2\nbeta = auto\n").unwrap();
        let cfg = config.to_str().unwrap();
        let mut compared = Vec::new();
        let mut identical = true;
        for rep in ["a", "b"] {
            let d = root.join(rep);
            let ds = |s: &str| d.join(s).to_str().unwrap().to_string();
            cli(&["eval", "--config", cfg, "--out", &ds("eval")]);
            cli(&["sweep", "--config", cfg, "--levels", "L3,L4", "--alphas", "0.1,0.3", "--out", &ds("sweep")]);
            cli(&["gen-data", "--config", cfg, "--seed", "3", "--out", &ds("data")]);
            cli(&[
                "train",
                "--expert",
                &ds("data/expert.rdxd"),
                "--suboptimal",
                &ds("data/suboptimal.rdxd"),
                "--mdp",
                &ds("data/mdp.rdxm"),
                "--out",
                &ds("train"),
            ]);
        }
        for file in [
            "eval/results.csv",
            "sweep/sweep.csv",
            "sweep/sweep_L3.svg",
            "train/omega.csv",
            "train/values.csv",
            "train/policy.csv",
            "train/trace.csv",
            "data/expert.rdxd",
            "data/suboptimal.rdxd",
        ] {
            let (a, b) = (read(&root.join("a"), file), read(&root.join("b"), file));
            identical &= a == b && !a.is_empty();
            compared.push(format!("{file} {}B", a.len()));
        }
        Check {
            name: "CLI determinism".into(),
            passed: identical,
            detail: format!("two runs byte-identical: {identical} ({})", compared.join(", ")),
            elapsed: start.elapsed(),
        }
    });
}
