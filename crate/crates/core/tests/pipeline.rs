use std::fs;
use std::path::PathBuf;

use rydberg_coarsening::config::ExperimentConfig;
use rydberg_coarsening::io::{read_snapshot_set, write_snapshot_set};
use rydberg_coarsening::pipeline::{analyze_files, analyze_set, expand_inputs, shot_seed, simulate, AnalyzeOptions};
use rydberg_coarsening::snapshot::{Snapshot, SnapshotMeta, SnapshotSet};
use rydberg_coarsening::Error;

const SWEEP_4X4: &str = r#"
seed = 5
shots = 500
engine = "exact"
output = "unused"
tolerance = 1e-5

[lattice]
width = 4
height = 4
v_nn_mhz = 11.69

[schedule]
protocol = "sweep"
omega_mhz = 6.0
delta_start_over_omega = -2.0
delta_end_over_omega = 2.5
sweep_rate = 1.5
ramp_on_us = 0.05
hold_times_us = [0.0, 0.1]

[analysis]
bootstrap = 100
"#;

const SQUARE_16X16: &str = r#"
seed = 3
shots = 200
engine = "meanfield"
output = "unused"

[lattice]
width = 16
height = 16
v_nn_mhz = 11.69

[schedule]
protocol = "local_domain"
omega_mhz = 6.0
delta_end_over_omega = 2.5
layout = { layout = "centered_square", half_side = 3, inner = "af2", outer = "af1" }
hold_times_us = [0.0, 0.1, 0.2, 0.3]

[analysis]
radial_center = [8, 8]
wall_rows = [8]
bootstrap = 50
"#;

fn options(cfg: &ExperimentConfig) -> AnalyzeOptions {
    AnalyzeOptions {
        analysis: cfg.analysis.clone(),
        seed: cfg.seed,
        ..AnalyzeOptions::default()
    }
}

#[test]
fn exact_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(SWEEP_4X4).unwrap();
    let run = simulate(&cfg, SWEEP_4X4, &dir.path().join("run")).unwrap();
    assert_eq!(run.snapshot_files.len(), 2);
    assert_eq!(run.rows.len(), 2);
    for (k, f) in run.snapshot_files.iter().enumerate() {
        let set = read_snapshot_set(f).unwrap();
        assert_eq!((set.width(), set.height(), set.len()), (4, 4, 500));
        assert_eq!(set.meta.seed, Some(shot_seed(cfg.seed, k)));
    }
    assert!(run.rows.iter().all(|r| r.staggered_magnetization.abs() <= 1.0));
    for name in ["observables.csv", "config.toml", "manifest.json"] {
        assert!(dir.path().join("run").join(name).exists(), "{name}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("run/config.toml")).unwrap(), SWEEP_4X4);

    let inputs = expand_inputs(&[dir.path().join("run")]).unwrap();
    assert_eq!(inputs, run.snapshot_files);
    let reports = analyze_files(&inputs, &options(&cfg), &dir.path().join("analysis")).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        let s = &r.summary;
        assert_eq!(s.shots, 500);
        assert!(s.retained_fraction > 0.5, "{s:?}");
        assert!(s.energy_total.is_some(), "{s:?}");
        let (t, b, w) = (s.energy_total.unwrap(), s.energy_bulk.unwrap(), s.energy_wall.unwrap());
        assert!((t - b - w).abs() <= 1e-9 * t.abs().max(1.0));
        assert!(s.domains.is_some());
    }
    let summary = fs::read_to_string(dir.path().join("analysis/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("file,hold_time_us,"));
}

#[test]
fn meanfield_run_writes_one_file_per_hold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(SQUARE_16X16).unwrap();
    let run = simulate(&cfg, SQUARE_16X16, dir.path()).unwrap();
    assert_eq!(run.snapshot_files.len(), cfg.schedule.hold_times().len());
    assert!(run.manifest.notes.iter().any(|n| n.contains("qualitative")));
    let reports = analyze_files(&run.snapshot_files, &options(&cfg), &dir.path().join("a")).unwrap();
    // the inner square starts with the opposite staggered sign
    let r0 = reports[0].radial.as_ref().unwrap();
    assert!(r0.values[0] * r0.values[r0.values.len() - 1] < 0.0);
    assert!(reports[0].summary.radius.is_some());
    assert!(dir.path().join("a/radial.csv").exists());
    assert!(dir.path().join("a/walls.csv").exists());
}

fn checkerboard(w: usize, h: usize) -> Snapshot {
    Snapshot::from_fn(w, h, |x, y| (x + y) % 2 == 0).unwrap()
}

#[test]
fn long_chain_is_discarded() {
    let mut bad = checkerboard(6, 6);
    for x in 0..5 {
        bad.set(x, 2, true);
    }
    let mut shots = vec![checkerboard(6, 6); 9];
    shots.push(bad);
    let set = SnapshotSet::new(6, 6, shots, SnapshotMeta::new()).unwrap();
    let r = analyze_set(&set, "chains", &AnalyzeOptions::default()).unwrap();
    assert_eq!(r.summary.retained, 9);
    assert!((r.summary.retained_fraction - 0.9).abs() < 1e-15);
    assert!(r.summary.xi_flags.contains("energy-parameters-missing"));
}

#[test]
fn fully_rejected_set_reports_empty() {
    let shots = vec![Snapshot::filled(5, 5, 1).unwrap(); 3];
    let set = SnapshotSet::new(5, 5, shots, SnapshotMeta::new()).unwrap();
    let r = analyze_set(&set, "full", &AnalyzeOptions::default()).unwrap();
    assert_eq!(r.summary.status, "empty");
    assert_eq!(r.summary.retained, 0);
    assert!(r.summary.xi.is_none());
}

#[test]
fn malformed_file_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    fs::write(&p, "3 1 2\n101\n1z1\n").unwrap();
    match read_snapshot_set(&p) {
        Err(Error::Parse { offset, message }) => {
            assert_eq!(offset, 11);
            assert!(message.contains("bad.txt"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let e = analyze_files(&[p], &AnalyzeOptions::default(), &dir.path().join("out")).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = expand_inputs(&[dir.path().to_path_buf()]).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn analysis_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut files: Vec<PathBuf> = Vec::new();
    for k in 0..3 {
        let shots = (0..40)
            .map(|s| {
                let mut shot = checkerboard(8, 8);
                shot.set((s + k) % 8, (3 * s) % 8, s % 3 == 0);
                shot
            })
            .collect();
        let p = dir.path().join(format!("s{k}.txt"));
        write_snapshot_set(&p, &SnapshotSet::new(8, 8, shots, SnapshotMeta::new()).unwrap()).unwrap();
        files.push(p);
    }
    let opts = AnalyzeOptions {
        delta: Some(10.0),
        v_nn: Some(20.0),
        v_nnn: Some(2.5),
        ..AnalyzeOptions::default()
    };
    let read = |out: &str| {
        analyze_files(&files, &opts, &dir.path().join(out)).unwrap();
        ["summary.csv", "structure_factor.csv", "domains.csv"]
            .map(|f| fs::read(dir.path().join(out).join(f)).unwrap())
    };
    assert_eq!(read("a"), read("b"));
}
