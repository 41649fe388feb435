use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coarsen(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coarsen"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COARSEN_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Rows of a CSV table as floats, header dropped.
fn numbers(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const TINY: &str = r#"
seed = 1
shots = 100
engine = "exact"
output = "run"

[lattice]
width = 2
height = 2
v_nn_mhz = 11.69

[schedule]
protocol = "constant"
omega_mhz = 1.0
delta_over_omega = 0.0
hold_times_us = [0.0, 0.5]
"#;

#[test]
fn landau_harmonic_limit_is_a_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&coarsen(
        &["theory", "landau", "--q", "1", "--t-end", "6", "--samples", "31"],
        dir.path(),
    ));
    assert!(out.starts_with("t,phi,velocity\n"));
    for row in numbers(&out) {
        assert!((row[1] - row[0].cos()).abs() < 1e-7, "{row:?}");
        assert!((row[2] + row[0].sin()).abs() < 1e-7, "{row:?}");
    }
}

#[test]
fn coarsening_rate_table_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&coarsen(&["theory", "coarsening-rate", "--from", "1.5", "--to", "4"], dir.path()));
    let rows = numbers(&out);
    assert_eq!(rows.len(), 11);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn gaussian_disordered_preset_doubles_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&coarsen(&["theory", "gaussian", "--preset", "disordered"], dir.path()));
    let line = out.lines().nth(1).unwrap();
    let ratio: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((ratio - 2.0).abs() < 0.1, "{out}");
}

#[test]
fn simulate_then_analyze_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let listed = stdout(&coarsen(&["simulate", "tiny.toml"], dir.path()));
    assert_eq!(listed.lines().count(), 2);
    let snap = fs::read_to_string(dir.path().join("run/snapshots/hold_000.txt")).unwrap();
    assert_eq!(snap.lines().next(), Some("2 2 100"));
    // Δ = 0 from |gggg⟩ at t = 0: every shot is empty
    assert!(snap.lines().skip(1).all(|l| l == "0000"));

    let summary = stdout(&coarsen(&["analyze", "run", "--output", "an"], dir.path()));
    assert!(summary.starts_with("file,hold_time_us,"));
    assert_eq!(summary.lines().count(), 3);
    assert!(dir.path().join("an/summary.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    for (out, workers) in [("a", "1"), ("b", "3")] {
        stdout(&coarsen(&["--workers", workers, "simulate", "tiny.toml", "--output", out], dir.path()));
        stdout(&coarsen(
            &["--workers", workers, "analyze", out, "--output", &format!("{out}/analysis")],
            dir.path(),
        ));
    }
    for f in [
        "snapshots/hold_000.txt",
        "snapshots/hold_001.txt",
        "snapshots/hold_001.txt.json",
        "observables.csv",
        "manifest.json",
        "analysis/summary.csv",
        "analysis/structure_factor.csv",
    ] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn seed_override_changes_shots() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    stdout(&coarsen(&["simulate", "tiny.toml", "--output", "a"], dir.path()));
    stdout(&coarsen(&["--seed", "99", "simulate", "tiny.toml", "--output", "b"], dir.path()));
    let read = |d: &str| fs::read_to_string(dir.path().join(d).join("snapshots/hold_001.txt")).unwrap();
    assert_ne!(read("a"), read("b"));
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), TINY.replace("shots = 100", "shots = 0")).unwrap();
    let o = coarsen(&["simulate", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = coarsen(&["theory", "coarsening-rate", "--from", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_or_malformed_input_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = coarsen(&["analyze", "nowhere.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    fs::write(dir.path().join("bad.txt"), "2 1 1\n1x\n").unwrap();
    let o = coarsen(&["analyze", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 7"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn schedule_dump_lists_breakpoints() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = stdout(&coarsen(&["schedule", "dump", "tiny.toml"], dir.path()));
    assert_eq!(out, "t_us,omega_mhz,delta_mhz,local_mhz\n0.0,1.0,0.0,0.0\n0.5,1.0,0.0,0.0\n");
    let gp = stdout(&coarsen(&["schedule", "dump", "tiny.toml", "--gnuplot"], dir.path()));
    assert!(gp.contains("$drive << EOD"));
}
