//! TOML experiment configuration.
//!
//! Frequencies are written as `f/2π` in MHz (`*_mhz`) or as multiples of Ω
//! (`*_over_omega`); times are in μs.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{mhz, Boundary, Cutoff, Lattice};
use crate::schedule::{
    linear_sweep_and_hold_with_ramp, ordered_phase_quench, pin_pattern, pinned_sweep_and_hold, BuiltSchedule,
    DriveSchedule, OrderedQuench, Ramp, Segment, TargetLayout, DEFAULT_PIN_RATIO, DEFAULT_QUENCH_OFF, DEFAULT_RAMP_ON,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Exact,
    Meanfield,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default = "one")]
    pub spacing_um: f64,
    pub v_nn_mhz: f64,
    #[serde(default = "open")]
    pub boundary: Boundary,
    #[serde(default)]
    pub cutoff: Cutoff,
}

fn one() -> f64 {
    1.0
}

fn open() -> Boundary {
    Boundary::Open
}

fn default_rate() -> f64 {
    3.0 / (2.0 * PI)
}

fn default_ramp_on() -> f64 {
    DEFAULT_RAMP_ON
}

fn default_quench_off() -> f64 {
    DEFAULT_QUENCH_OFF
}

fn default_pin_ratio() -> f64 {
    DEFAULT_PIN_RATIO
}

fn default_delta_start() -> f64 {
    -4.0
}

fn default_delta_high() -> f64 {
    3.3
}

/// How a local-domain run prepares its initial state.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// Pinned global sweep from `|g…g⟩`.
    Sweep,
    /// Mean-field energy minimum with pinned sites in `|g⟩`.
    #[default]
    Minimize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// Constant drive from `|g…g⟩` (or an eigenstate, see `prepare_delta_over_omega`).
    Constant {
        omega_mhz: f64,
        delta_over_omega: f64,
        /// Start from the ground state at this detuning instead of `|g…g⟩`.
        #[serde(default)]
        prepare_delta_over_omega: Option<f64>,
        hold_times_us: Vec<f64>,
    },
    Sweep {
        omega_mhz: f64,
        #[serde(default = "default_delta_start")]
        delta_start_over_omega: f64,
        delta_end_over_omega: f64,
        #[serde(default = "default_rate")]
        sweep_rate: f64,
        #[serde(default = "default_ramp_on")]
        ramp_on_us: f64,
        hold_times_us: Vec<f64>,
    },
    LocalDomain {
        omega_mhz: f64,
        #[serde(default = "default_delta_start")]
        delta_start_over_omega: f64,
        delta_end_over_omega: f64,
        #[serde(default = "default_rate")]
        sweep_rate: f64,
        layout: TargetLayout,
        #[serde(default = "default_pin_ratio")]
        pin_ratio: f64,
        #[serde(default = "default_quench_off")]
        quench_off_us: f64,
        #[serde(default)]
        preparation: Preparation,
        hold_times_us: Vec<f64>,
    },
    OrderedQuench {
        omega_mhz: f64,
        #[serde(default = "default_delta_high")]
        delta_high_over_omega: f64,
        delta_final_over_omega: f64,
        #[serde(default = "default_rate")]
        sweep_rate: f64,
        #[serde(default = "default_pin_ratio")]
        pin_ratio: f64,
        #[serde(default = "default_quench_off")]
        quench_off_us: f64,
        hold_times_us: Vec<f64>,
    },
}

impl ScheduleConfig {
    pub fn hold_times(&self) -> &[f64] {
        match self {
            ScheduleConfig::Constant { hold_times_us, .. }
            | ScheduleConfig::Sweep { hold_times_us, .. }
            | ScheduleConfig::LocalDomain { hold_times_us, .. }
            | ScheduleConfig::OrderedQuench { hold_times_us, .. } => hold_times_us,
        }
    }

    pub fn omega(&self) -> f64 {
        match self {
            ScheduleConfig::Constant { omega_mhz, .. }
            | ScheduleConfig::Sweep { omega_mhz, .. }
            | ScheduleConfig::LocalDomain { omega_mhz, .. }
            | ScheduleConfig::OrderedQuench { omega_mhz, .. } => mhz(*omega_mhz),
        }
    }

    /// Detuning during the hold, in units of Ω.
    pub fn hold_delta_over_omega(&self) -> f64 {
        match self {
            ScheduleConfig::Constant { delta_over_omega, .. } => *delta_over_omega,
            ScheduleConfig::Sweep { delta_end_over_omega, .. }
            | ScheduleConfig::LocalDomain { delta_end_over_omega, .. } => *delta_end_over_omega,
            ScheduleConfig::OrderedQuench { delta_final_over_omega, .. } => *delta_final_over_omega,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleConfig::Constant { .. } => "constant",
            ScheduleConfig::Sweep { .. } => "sweep",
            ScheduleConfig::LocalDomain { .. } => "local_domain",
            ScheduleConfig::OrderedQuench { .. } => "ordered_quench",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "yes")]
    pub postselect: bool,
    #[serde(default = "four")]
    pub max_chain: usize,
    #[serde(default = "four_u32")]
    pub max_defects: u32,
    #[serde(default = "yes")]
    pub correlation: bool,
    #[serde(default = "yes")]
    pub domains: bool,
    #[serde(default = "yes")]
    pub energy: bool,
    /// Centre for radial profiles and the domain radius.
    #[serde(default)]
    pub radial_center: Option<[usize; 2]>,
    /// Restrict radial profiles to one parity class: `1` even, `-1` odd.
    #[serde(default)]
    pub sublattice: Option<i8>,
    #[serde(default)]
    pub wall_rows: Vec<usize>,
    #[serde(default = "thousand")]
    pub bootstrap: usize,
}

fn yes() -> bool {
    true
}

fn four() -> usize {
    4
}

fn four_u32() -> u32 {
    4
}

fn thousand() -> usize {
    1000
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            postselect: true,
            max_chain: 4,
            max_defects: 4,
            correlation: true,
            domains: true,
            energy: true,
            radial_center: None,
            sublattice: None,
            wall_rows: Vec::new(),
            bootstrap: 1000,
        }
    }
}

fn default_tolerance() -> f64 {
    1e-7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub shots: usize,
    pub engine: EngineKind,
    pub output: PathBuf,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub lattice: LatticeConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: name.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Config {
                field: line.map_or_else(|| "<document>".to_string(), |l| format!("line {l}")),
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lattice;
        if l.width == 0 || l.height == 0 {
            return Err(field("lattice.width/height", "dimensions must be positive"));
        }
        if !(l.spacing_um > 0.0) {
            return Err(field("lattice.spacing_um", "spacing must be positive"));
        }
        if !(l.v_nn_mhz > 0.0) {
            return Err(field("lattice.v_nn_mhz", "interaction must be positive"));
        }
        if self.engine == EngineKind::Exact && l.width * l.height > 20 {
            return Err(field(
                "engine",
                format!("exact engine supports at most 20 sites, lattice has {}", l.width * l.height),
            ));
        }
        if self.shots == 0 {
            return Err(field("shots", "need at least one shot"));
        }
        if !(self.tolerance > 0.0) {
            return Err(field("tolerance", "must be positive"));
        }
        let holds = self.schedule.hold_times();
        if holds.is_empty() {
            return Err(field("schedule.hold_times_us", "need at least one hold time"));
        }
        if holds.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(field("schedule.hold_times_us", "hold times must be finite and non-negative"));
        }
        if holds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field("schedule.hold_times_us", "hold times must be strictly increasing"));
        }
        if !(self.schedule.omega() > 0.0) {
            return Err(field("schedule.omega_mhz", "Ω must be positive"));
        }
        if let ScheduleConfig::Constant {
            prepare_delta_over_omega: Some(_),
            ..
        } = &self.schedule
        {
            if self.engine != EngineKind::Exact {
                return Err(field("schedule.prepare_delta_over_omega", "eigenstate preparation needs the exact engine"));
            }
        }
        if let ScheduleConfig::LocalDomain {
            preparation: Preparation::Minimize,
            ..
        } = &self.schedule
        {
            if self.engine != EngineKind::Meanfield {
                return Err(field("schedule.preparation", "`minimize` preparation needs the meanfield engine"));
            }
        }
        if let Some(s) = self.analysis.sublattice {
            if s != 1 && s != -1 {
                return Err(field("analysis.sublattice", "must be 1 or -1"));
            }
        }
        if let Some([x, y]) = self.analysis.radial_center {
            if x >= l.width || y >= l.height {
                return Err(field("analysis.radial_center", "outside the lattice"));
            }
        }
        if let Some(r) = self.analysis.wall_rows.iter().find(|&&r| r >= l.height) {
            return Err(field("analysis.wall_rows", format!("row {r} outside the lattice")));
        }
        // builds the schedule once to surface protocol errors early
        self.build_schedule(&self.lattice()?)
            .map_err(|e| field("schedule", e.to_string()))?;
        Ok(())
    }

    pub fn lattice(&self) -> Result<Lattice> {
        let l = &self.lattice;
        Lattice::new(l.width, l.height, l.spacing_um, mhz(l.v_nn_mhz), l.boundary, l.cutoff)
    }

    fn max_hold(&self) -> f64 {
        self.schedule.hold_times().iter().copied().fold(0.0, f64::max)
    }

    /// Full drive covering the longest hold.
    pub fn build_schedule(&self, lattice: &Lattice) -> Result<BuiltSchedule> {
        let omega = self.schedule.omega();
        let hold = self.max_hold();
        match &self.schedule {
            ScheduleConfig::Constant { delta_over_omega, .. } => Ok(BuiltSchedule {
                schedule: DriveSchedule::constant(omega, delta_over_omega * omega, hold.max(1e-12))?,
                hold_start: 0.0,
                warnings: Vec::new(),
            }),
            ScheduleConfig::Sweep {
                delta_start_over_omega,
                delta_end_over_omega,
                sweep_rate,
                ramp_on_us,
                ..
            } => {
                let s = linear_sweep_and_hold_with_ramp(
                    omega,
                    delta_start_over_omega * omega,
                    delta_end_over_omega * omega,
                    *sweep_rate,
                    hold,
                    *ramp_on_us,
                )?;
                Ok(BuiltSchedule {
                    hold_start: s.total_time() - hold,
                    schedule: s,
                    warnings: Vec::new(),
                })
            }
            ScheduleConfig::LocalDomain {
                delta_start_over_omega,
                delta_end_over_omega,
                sweep_rate,
                layout,
                pin_ratio,
                quench_off_us,
                preparation,
                ..
            } => {
                let pattern = pin_pattern(lattice, &layout.order_map(lattice))?;
                let amp = -pin_ratio * omega;
                match preparation {
                    Preparation::Sweep => pinned_sweep_and_hold(
                        omega,
                        delta_start_over_omega * omega,
                        delta_end_over_omega * omega,
                        *sweep_rate,
                        &pattern,
                        amp,
                        *quench_off_us,
                        hold,
                    ),
                    Preparation::Minimize => {
                        let delta = delta_end_over_omega * omega;
                        let segment = |t0: f64, t1: f64, local: Ramp| Segment {
                            t_start: t0,
                            t_end: t1,
                            omega: Ramp::constant(omega),
                            delta: Ramp::constant(delta),
                            local,
                        };
                        let hold_start = quench_off_us.max(0.0);
                        let mut segs = Vec::new();
                        if hold_start > 0.0 {
                            segs.push(segment(0.0, hold_start, Ramp::linear(amp, 0.0)));
                        }
                        segs.push(segment(hold_start, hold_start + hold.max(1e-12), Ramp::constant(0.0)));
                        let s = DriveSchedule::new(segs, pattern.weights.clone())?;
                        Ok(BuiltSchedule {
                            schedule: s,
                            hold_start,
                            warnings: Vec::new(),
                        })
                    }
                }
            }
            ScheduleConfig::OrderedQuench {
                delta_high_over_omega,
                delta_final_over_omega,
                sweep_rate,
                pin_ratio,
                quench_off_us,
                ..
            } => {
                let pattern = pin_pattern(lattice, &crate::schedule::TargetLayout::Uniform {
                    order: crate::schedule::Order::Af1,
                }
                .order_map(lattice))?;
                let mut p = OrderedQuench::new(omega, delta_final_over_omega * omega);
                p.delta_high = delta_high_over_omega * omega;
                p.sweep_rate = *sweep_rate;
                p.pin_amplitude = -pin_ratio * omega;
                p.quench_off = *quench_off_us;
                p.hold_time = hold.max(1e-12);
                ordered_phase_quench(&p, &pattern)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
seed = 3
shots = 100
engine = "exact"
output = "out"

[lattice]
width = 2
height = 2
v_nn_mhz = 11.69

[schedule]
protocol = "sweep"
omega_mhz = 6.0
delta_end_over_omega = 3.0
hold_times_us = [0.0, 0.1]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(SWEEP).unwrap();
        assert_eq!(c.lattice.cutoff, Cutoff::ThirdNearest);
        assert_eq!(c.analysis.max_chain, 4);
        assert_eq!(c.schedule.hold_times(), &[0.0, 0.1]);
        let built = c.build_schedule(&c.lattice().unwrap()).unwrap();
        assert!((built.schedule.total_time() - built.hold_start - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reports_line_and_field() {
        let bad = SWEEP.replace("shots = 100", "shots = 100\nbogus = 1");
        match ExperimentConfig::from_toml(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "line 4"),
            e => panic!("{e:?}"),
        }
        let big = SWEEP.replace("width = 2", "width = 5").replace("height = 2", "height = 5");
        match ExperimentConfig::from_toml(&big).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "engine"),
            e => panic!("{e:?}"),
        }
        let unsorted = SWEEP.replace("[0.0, 0.1]", "[0.1, 0.0]");
        assert!(ExperimentConfig::from_toml(&unsorted).is_err());
    }

    #[test]
    fn local_domain_layout_parses() {
        let text = r#"
seed = 1
shots = 10
engine = "meanfield"
output = "o"
[lattice]
width = 16
height = 16
v_nn_mhz = 11.69
[schedule]
protocol = "local_domain"
omega_mhz = 6.0
delta_end_over_omega = 2.5
layout = { layout = "centered_square", half_side = 3, inner = "af2", outer = "af1" }
hold_times_us = [0.0, 0.5]
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let built = c.build_schedule(&c.lattice().unwrap()).unwrap();
        assert!((built.hold_start - DEFAULT_QUENCH_OFF).abs() < 1e-15);
    }
}
