//! End-to-end runs: simulate a configured protocol over a hold-time grid and
//! analyse snapshot files into result tables.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    bootstrap, classical_energy, domain_radius, domain_statistics, label_set, mean, postselect, radial_profile,
    wall_positions_with_errors, DomainStatistics, RadialProfile,
};
use crate::config::{EngineKind, ExperimentConfig, Preparation, ScheduleConfig};
use crate::error::{Error, Result};
use crate::io::{read_snapshot_set, to_json, write_csv, write_snapshot_set, write_text};
use crate::lattice::{Cutoff, Lattice, Site};
use crate::meanfield::{meanfield_energy, meanfield_evolve, meanfield_minimize, meanfield_sample, ProductState};
use crate::quantum::{ExactEngine, Observable, QuantumState};
use crate::schedule::{pin_pattern, DriveSchedule};
use crate::snapshot::{SnapshotMeta, SnapshotSet};
use crate::spectra::{connected_correlation, fit_correlation_length, structure_factor, CorrelationFitOptions, RadialPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for the shots taken at hold index `k`.
pub fn shot_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableRow {
    pub hold_time_us: f64,
    pub t_us: f64,
    pub staggered_magnetization: f64,
    pub classical_energy: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub engine: EngineKind,
    pub protocol: String,
    pub hold_start_us: f64,
    pub snapshot_files: Vec<String>,
    pub observables: String,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub snapshot_files: Vec<PathBuf>,
    pub rows: Vec<ObservableRow>,
    pub manifest: Manifest,
}

enum EngineState {
    Exact(ExactEngine, QuantumState),
    Meanfield(Lattice, ProductState),
}

fn v_nnn(lattice: &Lattice) -> f64 {
    if lattice.cutoff() == Cutoff::Nearest {
        0.0
    } else {
        lattice.v_nn() / 8.0
    }
}

fn meanfield_classical(lattice: &Lattice, delta: f64, n: &[f64]) -> f64 {
    let site: f64 = n.iter().map(|v| -delta * (v - 1.0)).sum();
    let pair: f64 = lattice.pairs().iter().map(|p| p.strength * n[p.i] * n[p.j]).sum();
    site + pair
}

impl EngineState {
    fn prepare(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Self> {
        let omega = cfg.schedule.omega();
        match cfg.engine {
            EngineKind::Exact => {
                let engine = ExactEngine::new(lattice.clone())?;
                let state = match &cfg.schedule {
                    ScheduleConfig::Constant {
                        prepare_delta_over_omega: Some(d),
                        ..
                    } => {
                        let spec = engine.ground_state_and_gaps(omega, d * omega, 2)?;
                        spec.state(0).ok_or_else(|| Error::invalid("eigensolver returned no vectors"))?
                    }
                    _ => QuantumState::ground(lattice.len()),
                };
                Ok(EngineState::Exact(engine, state))
            }
            EngineKind::Meanfield => {
                let state = match &cfg.schedule {
                    ScheduleConfig::LocalDomain {
                        preparation: Preparation::Minimize,
                        layout,
                        delta_end_over_omega,
                        ..
                    } => {
                        let pattern = pin_pattern(lattice, &layout.order_map(lattice))?;
                        meanfield_minimize(lattice, omega, delta_end_over_omega * omega, &pattern.pinned)?
                    }
                    _ => ProductState::ground(lattice.len()),
                };
                Ok(EngineState::Meanfield(lattice.clone(), state))
            }
        }
    }

    fn evolve(&mut self, schedule: &DriveSchedule, t0: f64, t1: f64, tol: f64) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        match self {
            EngineState::Exact(engine, state) => engine.evolve(state, schedule, t0, t1, tol),
            EngineState::Meanfield(lattice, state) => meanfield_evolve(lattice, state, schedule, t0, t1, tol),
        }
    }

    fn observables(&self, schedule: &DriveSchedule, t: f64) -> Result<(f64, f64, f64)> {
        let drive = schedule.evaluate(t);
        let local = schedule.local_detunings(t);
        match self {
            EngineState::Exact(engine, state) => {
                let local_deltas = if local.is_empty() {
                    vec![0.0; engine.n_sites()]
                } else {
                    local
                };
                Ok((
                    engine.measure(state, &Observable::StaggeredMagnetization)?,
                    engine.measure(state, &Observable::ClassicalEnergy { delta: drive.delta })?,
                    engine.measure(
                        state,
                        &Observable::Energy {
                            omega: drive.omega,
                            delta: drive.delta,
                            local_deltas,
                        },
                    )?,
                ))
            }
            EngineState::Meanfield(lattice, state) => {
                let ms = mean(&state.staggered_map(lattice));
                let n = state.occupations();
                let det: Vec<f64> = (0..lattice.len())
                    .map(|i| drive.delta + local.get(i).copied().unwrap_or(0.0))
                    .collect();
                Ok((
                    ms,
                    meanfield_classical(lattice, drive.delta, &n),
                    meanfield_energy(lattice, drive.omega, &det, state)?,
                ))
            }
        }
    }

    fn sample(&self, shots: usize, seed: u64) -> Result<SnapshotSet> {
        match self {
            EngineState::Exact(engine, state) => engine.sample_snapshots(state, shots, seed),
            EngineState::Meanfield(lattice, state) => meanfield_sample(lattice, state, shots, seed),
        }
    }
}

/// Step the configured engine through the hold-time grid, calling `visit`
/// with the hold index, hold time, absolute time and state.
fn run_holds(
    cfg: &ExperimentConfig,
    lattice: &Lattice,
    built: &crate::schedule::BuiltSchedule,
    mut visit: impl FnMut(usize, f64, f64, &EngineState) -> Result<()>,
) -> Result<()> {
    let schedule = &built.schedule;
    let mut state = EngineState::prepare(cfg, lattice)?;
    let mut t = 0.0;
    for (k, &hold) in cfg.schedule.hold_times().iter().enumerate() {
        let target = (built.hold_start + hold).min(schedule.total_time());
        state.evolve(schedule, t, target, cfg.tolerance).map_err(|e| match e {
            Error::IntegrationFailure {
                t,
                step,
                accepted,
                rejected,
                reason,
            } => Error::IntegrationFailure {
                t,
                step,
                accepted,
                rejected,
                reason: format!("hold time {hold} μs: {reason}"),
            },
            other => other,
        })?;
        t = target;
        visit(k, hold, t, &state)?;
    }
    Ok(())
}

/// Expected staggered map `(−1)^{x+y} ⟨Z⟩` at each hold time of a
/// mean-field configuration.
pub fn meanfield_staggered_maps(cfg: &ExperimentConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    cfg.validate()?;
    if cfg.engine != EngineKind::Meanfield {
        return Err(Error::invalid("staggered maps need the meanfield engine"));
    }
    let lattice = cfg.lattice()?;
    let built = cfg.build_schedule(&lattice)?;
    let mut out = Vec::new();
    run_holds(cfg, &lattice, &built, |_, hold, _, state| {
        if let EngineState::Meanfield(l, s) = state {
            out.push((hold, s.staggered_map(l)));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Run a configuration and write its outputs under `out_dir`.
pub fn simulate(cfg: &ExperimentConfig, config_text: &str, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let built = cfg.build_schedule(&lattice)?;
    let schedule = &built.schedule;
    let omega = cfg.schedule.omega();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    run_holds(cfg, &lattice, &built, |k, hold, t, state| {
        let (ms, hcl, h) = state.observables(schedule, t)?;
        rows.push(ObservableRow {
            hold_time_us: hold,
            t_us: t,
            staggered_magnetization: ms,
            classical_energy: hcl,
            energy: h,
        });
        let seed = shot_seed(cfg.seed, k);
        let mut set = state.sample(cfg.shots, seed)?;
        let mut meta = SnapshotMeta::new();
        meta.hold_time = Some(hold);
        meta.delta_over_omega = Some(cfg.schedule.hold_delta_over_omega());
        meta.omega = Some(omega);
        meta.v_nn = Some(lattice.v_nn());
        meta.v_nnn = Some(v_nnn(&lattice));
        meta.seed = Some(seed);
        meta.protocol = Some(cfg.schedule.name().to_string());
        meta.engine = Some(
            match cfg.engine {
                EngineKind::Exact => "exact",
                EngineKind::Meanfield => "meanfield (qualitative)",
            }
            .to_string(),
        );
        set.meta = meta;
        let path = out_dir.join("snapshots").join(format!("hold_{k:03}.txt"));
        write_snapshot_set(&path, &set)?;
        files.push(path);
        Ok(())
    })?;
    write_csv(&out_dir.join("observables.csv"), &rows)?;
    write_text(&out_dir.join("config.toml"), config_text)?;
    let mut notes = built.warnings.clone();
    if cfg.engine == EngineKind::Meanfield {
        notes.push("mean-field dynamics on large lattices are qualitative".to_string());
    }
    let rel = |p: &Path| {
        p.strip_prefix(out_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let manifest = Manifest {
        version: VERSION.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: cfg.seed,
        engine: cfg.engine,
        protocol: cfg.schedule.name().to_string(),
        hold_start_us: built.hold_start,
        snapshot_files: files.iter().map(|p| rel(p)).collect(),
        observables: "observables.csv".to_string(),
        notes,
    };
    write_text(&out_dir.join("manifest.json"), &to_json(&manifest))?;
    Ok(RunSummary {
        dir: out_dir.to_path_buf(),
        snapshot_files: files,
        rows,
        manifest,
    })
}

/// Analysis settings; energies fall back to the file metadata when unset.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AnalyzeOptions {
    pub analysis: crate::config::AnalysisConfig,
    pub seed: u64,
    pub delta: Option<f64>,
    pub v_nn: Option<f64>,
    pub v_nnn: Option<f64>,
    pub fit: CorrelationFitOptions,
}

/// One summary row per snapshot set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub file: String,
    pub hold_time_us: Option<f64>,
    pub delta_over_omega: Option<f64>,
    pub shots: usize,
    pub retained: usize,
    pub retained_fraction: f64,
    pub status: String,
    pub xi: Option<f64>,
    pub xi_err: Option<f64>,
    pub s0: Option<f64>,
    pub b: Option<f64>,
    pub xi_converged: Option<bool>,
    pub xi_flags: String,
    pub domains: Option<usize>,
    pub mean_largest: Option<f64>,
    pub mean_second_largest: Option<f64>,
    pub energy_total: Option<f64>,
    pub energy_total_err: Option<f64>,
    pub energy_bulk: Option<f64>,
    pub energy_bulk_err: Option<f64>,
    pub energy_wall: Option<f64>,
    pub energy_wall_err: Option<f64>,
    pub radius: Option<f64>,
    pub radius_crossings: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetReport {
    pub summary: SummaryRow,
    pub structure: Vec<RadialPoint>,
    pub domain_stats: Option<DomainStatistics>,
    pub radial: Option<RadialProfile>,
    /// `(row, x, x_err)`.
    pub walls: Vec<(usize, Option<f64>, Option<f64>)>,
}

pub fn analyze_set(set: &SnapshotSet, name: &str, opts: &AnalyzeOptions) -> Result<SetReport> {
    let a = &opts.analysis;
    let selected = if a.postselect {
        postselect(set, a.max_chain, a.max_defects)
    } else {
        crate::analysis::PostSelection {
            set: set.clone(),
            retained_fraction: 1.0,
        }
    };
    let s = &selected.set;
    let mut row = SummaryRow {
        file: name.to_string(),
        hold_time_us: set.meta.hold_time,
        delta_over_omega: set.meta.delta_over_omega,
        shots: set.len(),
        retained: s.len(),
        retained_fraction: selected.retained_fraction,
        status: "ok".to_string(),
        xi: None,
        xi_err: None,
        s0: None,
        b: None,
        xi_converged: None,
        xi_flags: String::new(),
        domains: None,
        mean_largest: None,
        mean_second_largest: None,
        energy_total: None,
        energy_total_err: None,
        energy_bulk: None,
        energy_bulk_err: None,
        energy_wall: None,
        energy_wall_err: None,
        radius: None,
        radius_crossings: None,
    };
    let mut report = SetReport {
        summary: row.clone(),
        structure: Vec::new(),
        domain_stats: None,
        radial: None,
        walls: Vec::new(),
    };
    if s.is_empty() {
        row.status = "empty".to_string();
        report.summary = row;
        return Ok(report);
    }
    let mut notes: Vec<String> = Vec::new();
    if a.correlation {
        if s.len() >= 2 {
            let sf = structure_factor(&connected_correlation(s)?);
            let fit = fit_correlation_length(&sf, &opts.fit);
            let finite = |v: Option<f64>| v.filter(|v| v.is_finite());
            row.xi = finite(fit.get("xi"));
            row.xi_err = finite(fit.std_error("xi"));
            row.s0 = finite(fit.get("s0"));
            row.b = finite(fit.get("b"));
            row.xi_converged = Some(fit.converged);
            notes.extend(fit.flags.iter().cloned());
            report.structure = sf.radial;
        } else {
            notes.push("too-few-shots".to_string());
        }
    }
    if a.domains {
        let stats = domain_statistics(&label_set(s))?;
        row.domains = Some(stats.distribution.len());
        row.mean_largest = Some(stats.mean_largest);
        row.mean_second_largest = Some(stats.mean_second_largest);
        report.domain_stats = Some(stats);
    }
    if a.energy {
        let delta = opts
            .delta
            .or_else(|| Some(set.meta.delta_over_omega? * set.meta.omega?));
        let v_nn = opts.v_nn.or(set.meta.v_nn);
        match (delta, v_nn) {
            (Some(delta), Some(v_nn)) if s.width() >= 3 && s.height() >= 3 => {
                let v_nnn = opts.v_nnn.or(set.meta.v_nnn).unwrap_or(v_nn / 8.0);
                let budget = classical_energy(s, delta, v_nn, v_nnn)?;
                let n = a.bootstrap.max(2);
                let part = |k: usize| -> Vec<f64> {
                    budget
                        .per_shot
                        .iter()
                        .map(|p| match k {
                            0 => p.0,
                            1 => p.1,
                            _ => p.2,
                        })
                        .collect()
                };
                let est = |k: usize| bootstrap(&part(k), mean, n, opts.seed.wrapping_add(k as u64));
                let (t, b, w) = (est(0)?, est(1)?, est(2)?);
                row.energy_total = Some(budget.total);
                row.energy_total_err = Some(t.std_error);
                row.energy_bulk = Some(budget.bulk);
                row.energy_bulk_err = Some(b.std_error);
                row.energy_wall = Some(budget.wall);
                row.energy_wall_err = Some(w.std_error);
            }
            (Some(_), Some(_)) => notes.push("energy-needs-3x3".to_string()),
            _ => notes.push("energy-parameters-missing".to_string()),
        }
    }
    if let Some([x, y]) = a.radial_center {
        let profile = radial_profile(s, Site::new(x, y), a.sublattice)?;
        let r = domain_radius(&profile.values);
        row.radius = r.radius;
        row.radius_crossings = Some(r.crossings);
        if r.crossings > 1 {
            notes.push("multiple-crossings".to_string());
        }
        report.radial = Some(profile);
    }
    if !a.wall_rows.is_empty() {
        let est = wall_positions_with_errors(s, &a.wall_rows, a.bootstrap.max(2), opts.seed)?;
        report.walls = a
            .wall_rows
            .iter()
            .zip(est)
            .map(|(&r, e)| (r, e.map(|e| e.estimate), e.map(|e| e.std_error)))
            .collect();
    }
    row.xi_flags = notes.join(";");
    report.summary = row;
    Ok(report)
}

#[derive(Serialize)]
struct StructureRow {
    file: String,
    hold_time_us: Option<f64>,
    k: f64,
    s: f64,
    modes: usize,
}

#[derive(Serialize)]
struct DomainRow {
    file: String,
    hold_time_us: Option<f64>,
    area: usize,
    probability: f64,
}

#[derive(Serialize)]
struct RadialRow {
    file: String,
    hold_time_us: Option<f64>,
    manhattan_distance: usize,
    staggered_magnetization: f64,
    sites: usize,
}

#[derive(Serialize)]
struct WallRow {
    file: String,
    hold_time_us: Option<f64>,
    row: usize,
    x: Option<f64>,
    x_err: Option<f64>,
}

/// Analyse snapshot files and write `summary.csv` plus detail tables.
pub fn analyze_files(paths: &[PathBuf], opts: &AnalyzeOptions, out_dir: &Path) -> Result<Vec<SetReport>> {
    if paths.is_empty() {
        return Err(Error::invalid("no snapshot files given"));
    }
    let reports = paths
        .par_iter()
        .map(|p| {
            let set = read_snapshot_set(p)?;
            let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            analyze_set(&set, &name, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary: Vec<&SummaryRow> = reports.iter().map(|r| &r.summary).collect();
    write_csv(&out_dir.join("summary.csv"), &summary)?;
    let structure: Vec<StructureRow> = reports
        .iter()
        .flat_map(|r| {
            r.structure.iter().map(|p| StructureRow {
                file: r.summary.file.clone(),
                hold_time_us: r.summary.hold_time_us,
                k: p.k,
                s: p.s,
                modes: p.modes,
            })
        })
        .collect();
    write_csv(&out_dir.join("structure_factor.csv"), &structure)?;
    let domains: Vec<DomainRow> = reports
        .iter()
        .flat_map(|r| {
            r.domain_stats.iter().flat_map(|d| {
                d.distribution.iter().map(|(&area, &probability)| DomainRow {
                    file: r.summary.file.clone(),
                    hold_time_us: r.summary.hold_time_us,
                    area,
                    probability,
                })
            })
        })
        .collect();
    write_csv(&out_dir.join("domains.csv"), &domains)?;
    let radial: Vec<RadialRow> = reports
        .iter()
        .flat_map(|r| {
            r.radial.iter().flat_map(|p| {
                p.values
                    .iter()
                    .zip(&p.counts)
                    .enumerate()
                    .filter(|(_, (_, &c))| c > 0)
                    .map(|(d, (&v, &c))| RadialRow {
                        file: r.summary.file.clone(),
                        hold_time_us: r.summary.hold_time_us,
                        manhattan_distance: d,
                        staggered_magnetization: v,
                        sites: c,
                    })
            })
        })
        .collect();
    if !radial.is_empty() {
        write_csv(&out_dir.join("radial.csv"), &radial)?;
    }
    let walls: Vec<WallRow> = reports
        .iter()
        .flat_map(|r| {
            r.walls.iter().map(|&(row, x, x_err)| WallRow {
                file: r.summary.file.clone(),
                hold_time_us: r.summary.hold_time_us,
                row,
                x,
                x_err,
            })
        })
        .collect();
    if !walls.is_empty() {
        write_csv(&out_dir.join("walls.csv"), &walls)?;
    }
    Ok(reports)
}

/// Snapshot files listed in a run manifest, or the given paths as-is.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let manifest = p.join("manifest.json");
            let raw = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Error::Parse {
                offset: 0,
                message: format!("{}: {e}", manifest.display()),
            })?;
            let files = v["snapshot_files"]
                .as_array()
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("{}: missing snapshot_files", manifest.display()),
                })?;
            out.extend(files.iter().filter_map(|f| f.as_str()).map(|f| p.join(f)));
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}
