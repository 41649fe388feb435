//! Drive waveforms `Ω(t)`, `Δ(t)` and the local pinning `δ_i(t) = α_i δ(t)`,
//! plus builders for the sweep, pinning and quench protocols.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Site};

/// Default duration of the Ω turn-on ramp, μs.
pub const DEFAULT_RAMP_ON: f64 = 0.2;
/// Default duration of the local-detuning switch-off, μs.
pub const DEFAULT_QUENCH_OFF: f64 = 0.05;
/// Default pinning strength in units of Ω (`|δ| ≈ 4Ω`).
pub const DEFAULT_PIN_RATIO: f64 = 4.0;

/// Linear interpolation between two endpoint values over a segment.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub fn constant(v: f64) -> Self {
        Ramp { start: v, end: v }
    }

    pub fn linear(start: f64, end: f64) -> Self {
        Ramp { start, end }
    }

    pub fn at(&self, frac: f64) -> f64 {
        self.start + (self.end - self.start) * frac
    }

    pub fn is_constant(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub omega: Ramp,
    pub delta: Ramp,
    /// Local amplitude `δ(t)`, multiplied by the per-site weights.
    pub local: Ramp,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn frac(&self, t: f64) -> f64 {
        let d = self.duration();
        if d > 0.0 {
            ((t - self.t_start) / d).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn sample(&self, t: f64) -> DriveSample {
        let f = self.frac(t);
        DriveSample {
            t,
            omega: self.omega.at(f),
            delta: self.delta.at(f),
            local: self.local.at(f),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.omega.is_constant() && self.delta.is_constant() && self.local.is_constant()
    }

    /// Split at an interior time; returns the two halves.
    fn split(&self, t: f64) -> (Segment, Segment) {
        let mid = self.sample(t);
        let left = Segment {
            t_end: t,
            omega: Ramp::linear(self.omega.start, mid.omega),
            delta: Ramp::linear(self.delta.start, mid.delta),
            local: Ramp::linear(self.local.start, mid.local),
            ..*self
        };
        let right = Segment {
            t_start: t,
            omega: Ramp::linear(mid.omega, self.omega.end),
            delta: Ramp::linear(mid.delta, self.delta.end),
            local: Ramp::linear(mid.local, self.local.end),
            ..*self
        };
        (left, right)
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DriveSample {
    pub t: f64,
    pub omega: f64,
    pub delta: f64,
    pub local: f64,
}

/// Piecewise-linear drive. Consecutive segments share their boundary time;
/// a value jump across a boundary is a declared step quench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSchedule {
    segments: Vec<Segment>,
    /// Per-site weights `α_i`; empty means no local term.
    local_pattern: Vec<f64>,
}

impl DriveSchedule {
    pub fn new(segments: Vec<Segment>, local_pattern: Vec<f64>) -> Result<Self> {
        let s = DriveSchedule {
            segments,
            local_pattern,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant drive over `[0, duration]`.
    pub fn constant(omega: f64, delta: f64, duration: f64) -> Result<Self> {
        Self::new(
            vec![Segment {
                t_start: 0.0,
                t_end: duration,
                omega: Ramp::constant(omega),
                delta: Ramp::constant(delta),
                local: Ramp::constant(0.0),
            }],
            Vec::new(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::invalid("schedule has no segments"))?;
        if first.t_start != 0.0 {
            return Err(Error::invalid("schedule must start at t = 0"));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.t_end >= s.t_start) || !s.t_end.is_finite() {
                return Err(Error::invalid(format!("segment {k} has t_end < t_start")));
            }
            if s.omega.start < 0.0 || s.omega.end < 0.0 {
                return Err(Error::invalid(format!("segment {k} has negative Ω")));
            }
            if s.local.start > 0.0 || s.local.end > 0.0 {
                return Err(Error::invalid(format!("segment {k} has positive local amplitude")));
            }
            if k > 0 && self.segments[k - 1].t_end != s.t_start {
                return Err(Error::invalid(format!("segment {k} is not contiguous")));
            }
        }
        if self.local_pattern.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::invalid("local weights must be non-negative"));
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn local_pattern(&self) -> &[f64] {
        &self.local_pattern
    }

    pub fn total_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Drive values at `t`; right-continuous at step quenches, and the final
    /// segment's end values at `t = T`.
    pub fn evaluate(&self, t: f64) -> DriveSample {
        let seg = self
            .segments
            .iter()
            .find(|s| s.t_start <= t && t < s.t_end)
            .unwrap_or_else(|| {
                if t < 0.0 {
                    &self.segments[0]
                } else {
                    self.segments.last().expect("validated schedule has segments")
                }
            });
        seg.sample(t)
    }

    /// `δ_i(t) = α_i δ(t)` for every site (empty when no pattern is set).
    pub fn local_detunings(&self, t: f64) -> Vec<f64> {
        let d = self.evaluate(t).local;
        self.local_pattern.iter().map(|&a| a * d).collect()
    }

    /// Times inside `(0, T)` at which some drive value jumps.
    pub fn steps(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .filter(|w| {
                w[0].omega.end != w[1].omega.start
                    || w[0].delta.end != w[1].delta.start
                    || w[0].local.end != w[1].local.start
            })
            .map(|w| w[1].t_start)
            .collect()
    }

    /// Segments overlapping `[t0, t1]`, clipped to that window.
    pub fn pieces(&self, t0: f64, t1: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        for s in &self.segments {
            if s.t_end <= t0 || s.t_start >= t1 || s.duration() == 0.0 {
                continue;
            }
            let mut piece = *s;
            if piece.t_start < t0 {
                piece = piece.split(t0).1;
            }
            if piece.t_end > t1 {
                piece = piece.split(t1).0;
            }
            out.push(piece);
        }
        out
    }

    /// Scale `α_i` by `c` and `δ(t)` by `1/c`.
    pub fn rescale_local(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("rescale factor must be positive"));
        }
        let mut out = self.clone();
        for a in &mut out.local_pattern {
            *a *= c;
        }
        for s in &mut out.segments {
            s.local.start /= c;
            s.local.end /= c;
        }
        Ok(out)
    }

    /// Attach a pinning pattern with constant amplitude `amplitude ≤ 0` over the
    /// whole schedule.
    pub fn with_pinning(mut self, pattern: &PinPattern, amplitude: f64) -> Result<Self> {
        if amplitude > 0.0 {
            return Err(Error::invalid("pinning amplitude must be ≤ 0"));
        }
        self.local_pattern = pattern.weights.clone();
        for s in &mut self.segments {
            s.local = Ramp::constant(amplitude);
        }
        self.validate()?;
        Ok(self)
    }

    /// Append a segment of length `duration` starting from the current end.
    pub fn push(&mut self, duration: f64, omega: Ramp, delta: Ramp, local: Ramp) -> Result<()> {
        if !(duration >= 0.0) {
            return Err(Error::invalid("segment duration must be non-negative"));
        }
        let t = self.total_time();
        self.segments.push(Segment {
            t_start: t,
            t_end: t + duration,
            omega,
            delta,
            local,
        });
        self.validate()
    }

    /// Extend the final drive values for `duration` more.
    pub fn extend_hold(&mut self, duration: f64) -> Result<()> {
        let last = *self.segments.last().expect("validated schedule has segments");
        self.push(
            duration,
            Ramp::constant(last.omega.end),
            Ramp::constant(last.delta.end),
            Ramp::constant(last.local.end),
        )
    }

    fn split_at(&mut self, t: f64) {
        if let Some(k) = self
            .segments
            .iter()
            .position(|s| s.t_start < t && t < s.t_end)
        {
            let (a, b) = self.segments[k].split(t);
            self.segments[k] = a;
            self.segments.insert(k + 1, b);
        }
    }
}

/// Sweep duration implied by the dimensionless rate `(Δ_end − Δ_start)/(Ω² T)`.
pub fn sweep_duration(omega: f64, delta_start: f64, delta_end: f64, sweep_rate: f64) -> f64 {
    (delta_end - delta_start) / (omega * omega * sweep_rate)
}

/// Ω turn-on at `delta_start`, linear Δ sweep to `delta_end`, then a hold.
pub fn linear_sweep_and_hold(
    omega: f64,
    delta_start: f64,
    delta_end: f64,
    sweep_rate: f64,
    hold_time: f64,
) -> Result<DriveSchedule> {
    linear_sweep_and_hold_with_ramp(omega, delta_start, delta_end, sweep_rate, hold_time, DEFAULT_RAMP_ON)
}

pub fn linear_sweep_and_hold_with_ramp(
    omega: f64,
    delta_start: f64,
    delta_end: f64,
    sweep_rate: f64,
    hold_time: f64,
    ramp_on: f64,
) -> Result<DriveSchedule> {
    if !(delta_start < 0.0 && delta_end > 0.0) {
        return Err(Error::invalid(format!(
            "sweep needs delta_start < 0 < delta_end, got {delta_start} → {delta_end}"
        )));
    }
    if !(sweep_rate > 0.0) || !(omega > 0.0) {
        return Err(Error::invalid("sweep rate and Ω must be positive"));
    }
    if !(hold_time >= 0.0) || !(ramp_on >= 0.0) {
        return Err(Error::invalid("hold and ramp durations must be non-negative"));
    }
    let t_sweep = sweep_duration(omega, delta_start, delta_end, sweep_rate);
    let mut segs = Vec::new();
    let mut t = 0.0;
    if ramp_on > 0.0 {
        segs.push(Segment {
            t_start: 0.0,
            t_end: ramp_on,
            omega: Ramp::linear(0.0, omega),
            delta: Ramp::constant(delta_start),
            local: Ramp::constant(0.0),
        });
        t = ramp_on;
    }
    segs.push(Segment {
        t_start: t,
        t_end: t + t_sweep,
        omega: Ramp::constant(omega),
        delta: Ramp::linear(delta_start, delta_end),
        local: Ramp::constant(0.0),
    });
    t += t_sweep;
    if hold_time > 0.0 {
        segs.push(Segment {
            t_start: t,
            t_end: t + hold_time,
            omega: Ramp::constant(omega),
            delta: Ramp::constant(delta_end),
            local: Ramp::constant(0.0),
        });
    }
    DriveSchedule::new(segs, Vec::new())
}

/// Ramp `δ(t)` linearly to zero over `[t_off, t_off + ramp_duration]`, zero after.
pub fn local_quench_off(schedule: &DriveSchedule, t_off: f64, ramp_duration: f64) -> Result<DriveSchedule> {
    let total = schedule.total_time();
    if !(t_off >= 0.0) || !(ramp_duration >= 0.0) || t_off + ramp_duration > total * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "quench window [{t_off}, {}] outside schedule [0, {total}]",
            t_off + ramp_duration
        )));
    }
    if schedule
        .segments
        .iter()
        .all(|s| s.local.start == 0.0 && s.local.end == 0.0)
    {
        return Ok(schedule.clone());
    }
    let t_end = (t_off + ramp_duration).min(total);
    let mut out = schedule.clone();
    out.split_at(t_off);
    out.split_at(t_end);
    let start_value = schedule.evaluate(t_off).local;
    for s in &mut out.segments {
        if s.t_start >= t_end {
            s.local = Ramp::constant(0.0);
        } else if s.t_start >= t_off && ramp_duration > 0.0 {
            let f = |t: f64| (start_value * (1.0 - (t - t_off) / ramp_duration).max(0.0)).min(0.0);
            s.local = Ramp::linear(f(s.t_start), f(s.t_end));
        }
    }
    out.validate()?;
    Ok(out)
}

/// Checkerboard orders: `Af1` has Rydberg atoms on even `x + y`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Af1,
    Af2,
}

impl Order {
    pub fn is_rydberg(self, site: Site) -> bool {
        match self {
            Order::Af1 => site.parity() == 1,
            Order::Af2 => site.parity() == -1,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Order::Af1 => 1.0,
            Order::Af2 => -1.0,
        }
    }

    pub fn flipped(self) -> Order {
        match self {
            Order::Af1 => Order::Af2,
            Order::Af2 => Order::Af1,
        }
    }
}

/// Target domain layouts used to seed pinning patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum TargetLayout {
    Uniform { order: Order },
    /// Square of `inner` order with half side `half_side` centred on
    /// `(width/2, height/2)`, surrounded by `outer`.
    CenteredSquare { half_side: usize, inner: Order, outer: Order },
    /// Wall at `x = column + tri(y)`, `tri` a triangle wave of height `amplitude`;
    /// sites left of the wall take `left`.
    ZigzagWall { column: usize, amplitude: usize, left: Order, right: Order },
}

impl TargetLayout {
    pub fn order_map(&self, lattice: &Lattice) -> Vec<Order> {
        (0..lattice.len())
            .map(|i| {
                let s = lattice.site(i);
                match *self {
                    TargetLayout::Uniform { order } => order,
                    TargetLayout::CenteredSquare { half_side, inner, outer } => {
                        let (cx, cy) = (lattice.width() / 2, lattice.height() / 2);
                        if s.x.abs_diff(cx) <= half_side && s.y.abs_diff(cy) <= half_side {
                            inner
                        } else {
                            outer
                        }
                    }
                    TargetLayout::ZigzagWall { column, amplitude, left, right } => {
                        if s.x < zigzag_column(column, amplitude, s.y) {
                            left
                        } else {
                            right
                        }
                    }
                }
            })
            .collect()
    }
}

/// Column of the first site right of a zigzag wall in row `y`.
pub fn zigzag_column(column: usize, amplitude: usize, y: usize) -> usize {
    if amplitude == 0 {
        return column;
    }
    let period = 2 * amplitude;
    let phase = y % period;
    column + phase.abs_diff(amplitude)
}

/// Pinned (target-ground) sites and their normalised weights `α_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinPattern {
    pub pinned: Vec<usize>,
    /// Weight per site, zero for unpinned sites; maximum weight is 1.
    pub weights: Vec<f64>,
}

impl PinPattern {
    pub fn is_pinned(&self, i: usize) -> bool {
        self.weights[i] > 0.0
    }
}

/// Pin every atom that is in `|g⟩` in the target map, with weight inversely
/// proportional to its number of target-Rydberg nearest neighbours.
pub fn pin_pattern(lattice: &Lattice, target: &[Order]) -> Result<PinPattern> {
    if target.is_empty() {
        return Err(Error::invalid("empty target order map"));
    }
    if target.len() != lattice.len() {
        return Err(Error::invalid(format!(
            "target map has {} entries for {} sites",
            target.len(),
            lattice.len()
        )));
    }
    let rydberg: Vec<bool> = (0..lattice.len())
        .map(|i| target[i].is_rydberg(lattice.site(i)))
        .collect();
    let mut weights = vec![0.0; lattice.len()];
    let mut pinned = Vec::new();
    for i in 0..lattice.len() {
        if rydberg[i] {
            continue;
        }
        let count = lattice
            .nearest_neighbors(i)
            .into_iter()
            .filter(|&j| rydberg[j])
            .count()
            .max(1);
        weights[i] = 1.0 / count as f64;
        pinned.push(i);
    }
    let max = weights.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for w in &mut weights {
            *w /= max;
        }
    }
    Ok(PinPattern { pinned, weights })
}

/// Parameters of the ordered-phase double quench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedQuench {
    pub omega: f64,
    pub delta_start: f64,
    pub delta_high: f64,
    pub delta_final: f64,
    pub sweep_rate: f64,
    pub ramp_on: f64,
    /// Pinning amplitude `δ ≤ 0`.
    pub pin_amplitude: f64,
    pub quench_off: f64,
    pub hold_time: f64,
    /// Critical detuning used for the diagnostic.
    pub delta_c: f64,
}

impl OrderedQuench {
    /// Defaults in units where `Ω` is given: start at `−4Ω`, stop at `3.3Ω`.
    pub fn new(omega: f64, delta_final: f64) -> Self {
        OrderedQuench {
            omega,
            delta_start: -4.0 * omega,
            delta_high: 3.3 * omega,
            delta_final,
            sweep_rate: 3.0 / (2.0 * std::f64::consts::PI),
            ramp_on: DEFAULT_RAMP_ON,
            pin_amplitude: -DEFAULT_PIN_RATIO * omega,
            quench_off: DEFAULT_QUENCH_OFF,
            hold_time: 1.0,
            delta_c: 1.12 * omega,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuiltSchedule {
    pub schedule: DriveSchedule,
    /// Time at which the free evolution (hold) begins.
    pub hold_start: f64,
    pub warnings: Vec<String>,
}

/// Sweep to `delta_high` with single-sublattice pinning, switch the pinning
/// off, step Δ down to `delta_final` and hold.
pub fn ordered_phase_quench(params: &OrderedQuench, pattern: &PinPattern) -> Result<BuiltSchedule> {
    let p = params;
    if !(p.delta_final <= p.delta_high) {
        return Err(Error::invalid("delta_final must not exceed delta_high"));
    }
    if !(p.delta_high > p.delta_c) {
        return Err(Error::invalid("delta_high must lie in the ordered phase"));
    }
    let mut warnings = Vec::new();
    if p.delta_final <= p.delta_c {
        warnings.push(format!(
            "final detuning Δ/Ω = {:.3} is at or below Δ_c/Ω = {:.3}; the quench leaves the ordered phase",
            p.delta_final / p.omega,
            p.delta_c / p.omega
        ));
    }
    let sweep = linear_sweep_and_hold_with_ramp(p.omega, p.delta_start, p.delta_high, p.sweep_rate, p.quench_off, p.ramp_on)?
        .with_pinning(pattern, p.pin_amplitude)?;
    let t_off = sweep.total_time() - p.quench_off;
    let mut schedule = local_quench_off(&sweep, t_off, p.quench_off)?;
    let hold_start = schedule.total_time();
    schedule.push(
        p.hold_time,
        Ramp::constant(p.omega),
        Ramp::constant(p.delta_final),
        Ramp::constant(0.0),
    )?;
    Ok(BuiltSchedule {
        schedule,
        hold_start,
        warnings,
    })
}

/// Local-domain preparation: pinned sweep to `delta_end`, pinning switched off
/// over `quench_off`, then a hold.
pub fn pinned_sweep_and_hold(
    omega: f64,
    delta_start: f64,
    delta_end: f64,
    sweep_rate: f64,
    pattern: &PinPattern,
    pin_amplitude: f64,
    quench_off: f64,
    hold_time: f64,
) -> Result<BuiltSchedule> {
    let sweep = linear_sweep_and_hold(omega, delta_start, delta_end, sweep_rate, 0.0)?
        .with_pinning(pattern, pin_amplitude)?;
    let mut schedule = sweep;
    schedule.push(
        quench_off,
        Ramp::constant(omega),
        Ramp::constant(delta_end),
        Ramp::linear(pin_amplitude, 0.0),
    )?;
    let hold_start = schedule.total_time();
    if hold_time > 0.0 {
        schedule.push(
            hold_time,
            Ramp::constant(omega),
            Ramp::constant(delta_end),
            Ramp::constant(0.0),
        )?;
    }
    Ok(BuiltSchedule {
        schedule,
        hold_start,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{mhz, Boundary, Cutoff};
    use std::f64::consts::PI;

    fn open(w: usize, h: usize) -> Lattice {
        Lattice::new(w, h, 1.0, 1.0, Boundary::Open, Cutoff::Nearest).unwrap()
    }

    #[test]
    fn sweep_duration_from_rate() {
        let om = mhz(6.0);
        let s = linear_sweep_and_hold(om, -4.0 * om, 3.0 * om, 3.0 / (2.0 * PI), 0.5).unwrap();
        let t_sweep = s.segments()[1].duration();
        assert!((om * t_sweep / (2.0 * PI) - 7.0 / 3.0).abs() < 1e-12);
        let rate = 7.0 * om / (om * om * t_sweep);
        assert!((rate - 3.0 / (2.0 * PI)).abs() < 1e-12);
        assert!((s.total_time() - (DEFAULT_RAMP_ON + t_sweep + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_hold_ends_at_sweep_end() {
        let s = linear_sweep_and_hold(1.0, -2.0, 2.0, 0.5, 0.0).unwrap();
        assert_eq!(s.segments().len(), 2);
        assert_eq!(s.total_time(), s.segments()[1].t_end);
        assert_eq!(s.evaluate(s.total_time()).delta, 2.0);
    }

    #[test]
    fn midpoint_detuning_is_interpolated() {
        let s = linear_sweep_and_hold_with_ramp(1.0, -3.0, 5.0, 0.5, 0.0, 0.0).unwrap();
        let t = s.total_time() / 2.0;
        assert!((s.evaluate(t).delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_wrong_signs() {
        assert!(linear_sweep_and_hold(1.0, 1.0, 2.0, 0.5, 0.0).is_err());
        assert!(linear_sweep_and_hold(1.0, -1.0, -0.5, 0.5, 0.0).is_err());
        assert!(linear_sweep_and_hold(1.0, -1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn uniform_pin_weights_follow_neighbour_count() {
        let l = open(16, 16);
        let map = TargetLayout::Uniform { order: Order::Af1 }.order_map(&l);
        let p = pin_pattern(&l, &map).unwrap();
        // (1,0) is a ground edge site with 3 Rydberg neighbours; (2,1)... bulk (1,2) has 4.
        let bulk = l.index(Site::new(3, 4)).unwrap();
        let corner = l.index(Site::new(15, 0)).unwrap(); // odd parity, ground in AF1
        assert_eq!(l.site(corner).parity(), -1);
        assert!((p.weights[corner] / p.weights[bulk] - 2.0).abs() < 1e-12);
        assert!((p.weights[corner] - 1.0).abs() < 1e-12);
        assert_eq!(p.pinned.len(), 128);
        assert!(p.pinned.iter().all(|&i| l.parity(i) == -1));
    }

    #[test]
    fn square_domain_boundary_sites_get_larger_weights() {
        let l = open(16, 16);
        let map = TargetLayout::CenteredSquare {
            half_side: 3,
            inner: Order::Af2,
            outer: Order::Af1,
        }
        .order_map(&l);
        let p = pin_pattern(&l, &map).unwrap();
        let bulk = p.weights[l.index(Site::new(3, 2)).unwrap()];
        let max_wall = (0..l.len())
            .filter(|&i| {
                let s = l.site(i);
                (s.x == 4 || s.x == 5) && (5..=11).contains(&s.y)
            })
            .map(|i| p.weights[i])
            .fold(0.0, f64::max);
        assert!(bulk > 0.0);
        assert!(max_wall > bulk);
    }

    #[test]
    fn empty_target_is_rejected() {
        let l = open(2, 2);
        assert!(pin_pattern(&l, &[]).is_err());
    }

    #[test]
    fn quench_off_ramps_to_zero() {
        let l = open(4, 4);
        let p = pin_pattern(&l, &TargetLayout::Uniform { order: Order::Af1 }.order_map(&l)).unwrap();
        let s = linear_sweep_and_hold(1.0, -2.0, 2.0, 0.5, 1.0)
            .unwrap()
            .with_pinning(&p, -4.0)
            .unwrap();
        let t_off = 8.0;
        let q = local_quench_off(&s, t_off, DEFAULT_QUENCH_OFF).unwrap();
        assert_eq!(q.evaluate(t_off).local, -4.0);
        assert!((q.evaluate(t_off + 0.025).local + 2.0).abs() < 1e-12);
        assert_eq!(q.evaluate(t_off + 0.05).local, 0.0);
        assert_eq!(q.evaluate(q.total_time()).local, 0.0);
        let step = local_quench_off(&s, t_off, 0.0).unwrap();
        assert_eq!(step.evaluate(t_off).local, 0.0);
        assert_eq!(step.steps(), vec![t_off]);
        // already-zero local drive is left unchanged
        let plain = linear_sweep_and_hold(1.0, -2.0, 2.0, 0.5, 1.0).unwrap();
        assert_eq!(local_quench_off(&plain, 1.0, 0.05).unwrap(), plain);
        assert!(local_quench_off(&s, s.total_time(), 0.1).is_err());
    }

    #[test]
    fn ordered_quench_profile() {
        let om = 1.0;
        let l = open(4, 4);
        let p = pin_pattern(&l, &TargetLayout::Uniform { order: Order::Af1 }.order_map(&l)).unwrap();
        let mut q = OrderedQuench::new(om, 2.0);
        q.hold_time = 2.0;
        let b = ordered_phase_quench(&q, &p).unwrap();
        assert!(b.warnings.is_empty());
        let s = &b.schedule;
        assert_eq!(s.evaluate(0.0).delta, -4.0);
        assert!(s.evaluate(b.hold_start - 1e-9).local.abs() < 1e-6);
        assert_eq!(s.evaluate(0.1).local, -4.0);
        assert!((s.evaluate(b.hold_start - DEFAULT_QUENCH_OFF).delta - 3.3).abs() < 1e-12);
        assert_eq!(s.evaluate(b.hold_start).delta, 2.0);
        assert_eq!(s.evaluate(s.total_time()).delta, 2.0);
        assert_eq!(s.steps(), vec![b.hold_start]);

        let same = ordered_phase_quench(&OrderedQuench::new(om, 3.3), &p).unwrap();
        assert!(same.schedule.steps().is_empty());

        let warn = ordered_phase_quench(&OrderedQuench::new(om, 1.0), &p).unwrap();
        assert_eq!(warn.warnings.len(), 1);
        assert!(ordered_phase_quench(&OrderedQuench::new(om, 4.0), &p).is_err());
    }

    #[test]
    fn zigzag_rows_alternate() {
        assert_eq!(zigzag_column(7, 1, 0), 8);
        assert_eq!(zigzag_column(7, 1, 1), 7);
        assert_eq!(zigzag_column(7, 1, 2), 8);
        assert_eq!(zigzag_column(7, 0, 5), 7);
    }
}
