//! `coarsen`: simulate, analyse and tabulate Rydberg-array coarsening runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rydberg_coarsening::config::{AnalysisConfig, ExperimentConfig};
use rydberg_coarsening::io::{csv_string, write_text};
use rydberg_coarsening::pipeline::{analyze_files, expand_inputs, simulate, AnalyzeOptions};
use rydberg_coarsening::schedule::DriveSchedule;
use rydberg_coarsening::spectra::{CorrelationFitOptions, LineShape};
use rydberg_coarsening::theory::{
    coarsening_rate, kzm_scales, landau_evolve, scaling_function, GaussianPreset, TheoryParams, NU, Z,
};
use rydberg_coarsening::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "coarsen", version, about = "Rydberg-array coarsening toolkit")]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the reference mode.
    #[arg(long, global = true, env = "COARSEN_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a configured protocol and write snapshots plus observables.
    Simulate {
        config: PathBuf,
        /// Run directory; defaults to the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write a gnuplot script for the observables.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Analyse snapshot files or run directories.
    Analyze(AnalyzeArgs),
    /// Effective-theory tables.
    Theory {
        #[command(subcommand)]
        table: TheoryCommand,
    },
    /// Inspect drive schedules.
    Schedule {
        #[command(subcommand)]
        action: ScheduleCommand,
    },
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Snapshot files, or run directories holding a manifest.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "analysis")]
    output: PathBuf,
    /// Take the `[analysis]` block from this experiment config. Defaults to
    /// the `config.toml` of the first run directory among the inputs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_postselect: bool,
    #[arg(long)]
    max_chain: Option<usize>,
    #[arg(long)]
    max_defects: Option<u32>,
    /// Centre `x,y` for radial profiles.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    radial_center: Option<Vec<usize>>,
    /// Restrict radial profiles to one parity class (1 or -1).
    #[arg(long, allow_hyphen_values = true)]
    sublattice: Option<i8>,
    #[arg(long, value_delimiter = ',')]
    wall_rows: Vec<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Detuning in MHz for the energy budget (else from metadata).
    #[arg(long, allow_hyphen_values = true)]
    delta_mhz: Option<f64>,
    #[arg(long)]
    v_nn_mhz: Option<f64>,
    #[arg(long)]
    v_nnn_mhz: Option<f64>,
    #[arg(long, value_enum, default_value_t = Shape::ThreeHalves)]
    shape: Shape,
    /// Upper wavenumber of the correlation-length fit window.
    #[arg(long)]
    k_fit_max: Option<f64>,
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Shape {
    ThreeHalves,
    OrnsteinZernike,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    Disordered,
    Ordered,
}

#[derive(Subcommand, Debug)]
enum TheoryCommand {
    /// Trajectory of the single-mode Landau model.
    Landau {
        #[arg(long, allow_hyphen_values = true)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        velocity: f64,
        #[arg(long, default_value_t = 20.0)]
        t_end: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Gaussian-layer preset with its frequency report.
    Gaussian {
        #[arg(long, value_enum, default_value_t = Preset::Disordered)]
        preset: Preset,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Write the condensate and ξ time series here.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Freeze-out scales for a list of ramp times.
    Kzm {
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 1.0)]
        l0: f64,
        #[arg(long, default_value_t = NU)]
        nu: f64,
        #[arg(long, default_value_t = Z)]
        z: f64,
    },
    /// Coarsening rate over a detuning grid (Δ/Ω).
    CoarseningRate {
        #[arg(long, default_value_t = 1.5)]
        from: f64,
        #[arg(long, default_value_t = 4.0)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
    /// Hold-time scaling function on a grid of x.
    #[command(name = "scaling-f")]
    ScalingF {
        #[arg(long, default_value_t = 2.0)]
        x_s: f64,
        #[arg(long, default_value_t = 0.5)]
        from: f64,
        #[arg(long, default_value_t = 10.0)]
        to: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
}

#[derive(Subcommand, Debug)]
enum ScheduleCommand {
    /// Breakpoints of the configured drive as CSV.
    Dump {
        config: PathBuf,
        /// Emit a self-contained gnuplot script instead of CSV.
        #[arg(long)]
        gnuplot: bool,
    },
}

fn read_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok((ExperimentConfig::from_toml(&text)?, text))
}

fn grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 || !(to > from) {
        return Err(Error::invalid("grid needs steps ≥ 2 and to > from"));
    }
    Ok((0..steps)
        .map(|k| from + (to - from) * k as f64 / (steps - 1) as f64)
        .collect())
}

const OBSERVABLES_GP: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 'hold time (us)'
set multiplot layout 3,1
plot 'observables.csv' using 1:3 with linespoints
plot 'observables.csv' using 1:4 with linespoints
plot 'observables.csv' using 1:5 with linespoints
unset multiplot
";

const SUMMARY_GP: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 'hold time (us)'
set ylabel 'correlation length (sites)'
plot 'summary.csv' using 2:10:11 with yerrorbars
";

fn run_simulate(cli_seed: Option<u64>, config: &Path, output: Option<PathBuf>, gnuplot: bool) -> Result<String> {
    let (mut cfg, text) = read_config(config)?;
    if let Some(s) = cli_seed {
        cfg.seed = s;
    }
    let dir = output.unwrap_or_else(|| cfg.output.clone());
    let run = simulate(&cfg, &text, &dir)?;
    if gnuplot {
        write_text(&dir.join("observables.gp"), OBSERVABLES_GP)?;
    }
    let mut out = String::new();
    for w in &run.manifest.notes {
        eprintln!("warning: {w}");
    }
    for f in &run.snapshot_files {
        let _ = writeln!(out, "{}", f.display());
    }
    Ok(out)
}

fn run_analyze(cli_seed: Option<u64>, a: AnalyzeArgs) -> Result<String> {
    let config = a.config.clone().or_else(|| {
        a.inputs
            .iter()
            .map(|p| p.join("config.toml"))
            .find(|p| p.is_file())
    });
    let (mut analysis, config_seed) = match &config {
        Some(p) => {
            let cfg = read_config(p)?.0;
            (cfg.analysis, Some(cfg.seed))
        }
        None => (AnalysisConfig::default(), None),
    };
    if a.no_postselect {
        analysis.postselect = false;
    }
    if let Some(v) = a.max_chain {
        analysis.max_chain = v;
    }
    if let Some(v) = a.max_defects {
        analysis.max_defects = v;
    }
    if let Some(c) = &a.radial_center {
        analysis.radial_center = Some([c[0], c[1]]);
    }
    if a.sublattice.is_some() {
        analysis.sublattice = a.sublattice;
    }
    if !a.wall_rows.is_empty() {
        analysis.wall_rows = a.wall_rows.clone();
    }
    if let Some(b) = a.bootstrap {
        analysis.bootstrap = b;
    }
    let mhz = rydberg_coarsening::mhz;
    let mut fit = CorrelationFitOptions {
        shape: match a.shape {
            Shape::ThreeHalves => LineShape::ThreeHalves,
            Shape::OrnsteinZernike => LineShape::OrnsteinZernike,
        },
        ..Default::default()
    };
    if let Some(k) = a.k_fit_max {
        fit.k_fit_max = k;
    }
    let opts = AnalyzeOptions {
        analysis,
        seed: cli_seed.or(config_seed).unwrap_or(0),
        delta: a.delta_mhz.map(mhz),
        v_nn: a.v_nn_mhz.map(mhz),
        v_nnn: a.v_nnn_mhz.map(mhz),
        fit,
    };
    let files = expand_inputs(&a.inputs)?;
    let reports = analyze_files(&files, &opts, &a.output)?;
    if a.gnuplot {
        write_text(&a.output.join("summary.gp"), SUMMARY_GP)?;
    }
    let rows: Vec<_> = reports.iter().map(|r| &r.summary).collect();
    csv_string(&rows)
}

#[derive(Serialize)]
struct LandauRow {
    t: f64,
    phi: f64,
    velocity: f64,
}

#[derive(Serialize)]
struct GaussianRow {
    t: f64,
    phi: f64,
    xi: f64,
}

#[derive(Serialize)]
struct GaussianReport {
    preset: String,
    omega_condensate: Option<f64>,
    omega_xi: Option<f64>,
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct KzmRow {
    tau: f64,
    t_kz: f64,
    xi_kz: f64,
}

#[derive(Serialize)]
struct RateRow {
    delta_over_omega: f64,
    rate: f64,
}

#[derive(Serialize)]
struct ScalingRow {
    x: f64,
    x_s: f64,
    f: f64,
}

fn run_theory(table: TheoryCommand) -> Result<String> {
    match table {
        TheoryCommand::Landau {
            q,
            lambda,
            phi,
            velocity,
            t_end,
            samples,
            tol,
        } => {
            let tr = landau_evolve(q, lambda, phi, velocity, t_end, tol, samples)?;
            let rows: Vec<LandauRow> = (0..tr.t.len())
                .map(|i| LandauRow {
                    t: tr.t[i],
                    phi: tr.value[i],
                    velocity: tr.velocity[i],
                })
                .collect();
            csv_string(&rows)
        }
        TheoryCommand::Gaussian {
            preset,
            tol,
            trajectory,
        } => {
            let p = match preset {
                Preset::Disordered => GaussianPreset::Disordered,
                Preset::Ordered => GaussianPreset::Ordered,
            };
            let (traj, corr) = p.run(tol)?;
            if let Some(path) = trajectory {
                let rows: Vec<GaussianRow> = traj
                    .states
                    .iter()
                    .zip(&corr.xi)
                    .zip(&traj.t)
                    .map(|((s, &xi), &t)| GaussianRow { t, phi: s.phi, xi })
                    .collect();
                write_text(&path, &csv_string(&rows)?)?;
            }
            let omega = |f: &Option<rydberg_coarsening::spectra::FitResult>| f.as_ref().and_then(|f| f.get("omega"));
            csv_string(&[GaussianReport {
                preset: format!("{preset:?}").to_lowercase(),
                omega_condensate: omega(&corr.condensate_fit),
                omega_xi: omega(&corr.xi_fit),
                ratio: corr.ratio,
            }])
        }
        TheoryCommand::Kzm { tau, t0, l0, nu, z } => {
            let rows = tau
                .iter()
                .map(|&tau| {
                    let s = kzm_scales(tau, t0, l0, nu, z)?;
                    Ok(KzmRow {
                        tau,
                        t_kz: s.t_kz,
                        xi_kz: s.xi_kz,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            csv_string(&rows)
        }
        TheoryCommand::CoarseningRate { from, to, steps } => {
            let params = TheoryParams::default();
            let rows = grid(from, to, steps)?
                .into_iter()
                .map(|d| {
                    Ok(RateRow {
                        delta_over_omega: d,
                        rate: coarsening_rate(d, &params)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            csv_string(&rows)
        }
        TheoryCommand::ScalingF { x_s, from, to, steps } => {
            let params = TheoryParams::default();
            let rows = grid(from, to, steps)?
                .into_iter()
                .map(|x| {
                    Ok(ScalingRow {
                        x,
                        x_s,
                        f: scaling_function(x, x_s, &params)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            csv_string(&rows)
        }
    }
}

#[derive(Serialize)]
struct DriveRow {
    t_us: f64,
    omega_mhz: f64,
    delta_mhz: f64,
    local_mhz: f64,
}

fn drive_rows(s: &DriveSchedule) -> Vec<DriveRow> {
    let to_mhz = |w: f64| w / std::f64::consts::TAU;
    s.segments()
        .iter()
        .flat_map(|seg| [seg.sample(seg.t_start), seg.sample(seg.t_end)])
        .map(|d| DriveRow {
            t_us: d.t,
            omega_mhz: to_mhz(d.omega),
            delta_mhz: to_mhz(d.delta),
            local_mhz: to_mhz(d.local),
        })
        .collect()
}

fn run_schedule(config: &Path, gnuplot: bool) -> Result<String> {
    let (cfg, _) = read_config(config)?;
    cfg.validate()?;
    let built = cfg.build_schedule(&cfg.lattice()?)?;
    let table = csv_string(&drive_rows(&built.schedule))?;
    if !gnuplot {
        return Ok(table);
    }
    let mut out = String::from("$drive << EOD\n");
    out.push_str(&table);
    out.push_str("EOD\n");
    out.push_str("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't (us)'\nset ylabel 'MHz'\n");
    let _ = writeln!(out, "set arrow from {0},graph 0 to {0},graph 1 nohead dt 2", built.hold_start);
    out.push_str("plot $drive using 1:2 with lines, $drive using 1:3 with lines, $drive using 1:4 with lines\n");
    Ok(out)
}

fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.workers {
        // A second initialisation only happens in tests; keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Simulate {
            config,
            output,
            gnuplot,
        } => run_simulate(cli.seed, &config, output, gnuplot),
        Command::Analyze(a) => run_analyze(cli.seed, a),
        Command::Theory { table } => run_theory(table),
        Command::Schedule {
            action: ScheduleCommand::Dump { config, gnuplot },
        } => run_schedule(&config, gnuplot),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
