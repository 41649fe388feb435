//! Effective theory: Landau order-parameter dynamics, Gaussian fluctuations
//! around a moving condensate, Kibble–Zurek scales and coarsening laws.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::Dopri5;
use crate::spectra::{fit_damped_oscillator, fit_radial, FitResult, LineShape, RadialPoint};

/// 3D Ising correlation-length exponent.
pub const NU: f64 = 0.629;
pub const Z: f64 = 1.0;
/// Dynamical exponent of curvature-driven coarsening.
pub const Z_D: f64 = 2.0;
pub const Z_BAR: f64 = 2.16;
/// Reference ratio of correlation-length and order-parameter frequencies at
/// the Wilson–Fisher fixed point (stored constant, not computed here).
pub const WILSON_FISHER_RATIO: f64 = 1.9;
pub const DELTA_C_OVER_OMEGA: f64 = 1.12;

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct TheoryParams {
    pub nu: f64,
    pub z: f64,
    pub z_d: f64,
    pub z_bar: f64,
    pub c: f64,
    pub c_s: f64,
    pub delta_c_over_omega: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        TheoryParams {
            nu: NU,
            z: Z,
            z_d: Z_D,
            z_bar: Z_BAR,
            c: 1.0,
            c_s: 0.9,
            delta_c_over_omega: DELTA_C_OVER_OMEGA,
        }
    }
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("z", self.z), ("z_d", self.z_d), ("z_bar", self.z_bar)] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("exponent {name} must be positive")));
            }
        }
        if !(self.c > self.c_s) {
            return Err(Error::invalid("scaling constants need C > C_s"));
        }
        Ok(())
    }
}

/// Uniformly sampled trajectory of a scalar and its velocity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub velocity: Vec<f64>,
}

fn check_tol(tol: f64, t_end: f64, n_samples: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::invalid("end time must be positive"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    Ok(())
}

fn sample_times(t_end: f64, n_samples: usize) -> Vec<f64> {
    (0..n_samples)
        .map(|k| t_end * k as f64 / (n_samples - 1) as f64)
        .collect()
}

pub fn landau_energy(q: f64, lambda: f64, phi: f64, velocity: f64) -> f64 {
    0.5 * velocity * velocity + 0.5 * q * phi * phi + 0.25 * lambda * phi.powi(4)
}

/// `φ̈ = −(q + λφ²)φ`, sampled at `n_samples` uniform times on `[0, t_end]`.
pub fn landau_evolve(
    q: f64,
    lambda: f64,
    phi: f64,
    velocity: f64,
    t_end: f64,
    tol: f64,
    n_samples: usize,
) -> Result<Trajectory> {
    check_tol(tol, t_end, n_samples)?;
    if lambda < 0.0 {
        return Err(Error::invalid("quartic coupling must be non-negative"));
    }
    let sys = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -(q + lambda * y[0] * y[0]) * y[0];
    };
    let scale = phi.abs().max(velocity.abs()).max(1e-300);
    let mut solver = Dopri5::new(tol * 1e-3, tol * 1e-3 * scale);
    let times = sample_times(t_end, n_samples);
    let mut y = [phi, velocity];
    let mut out = Trajectory {
        t: times.clone(),
        value: Vec::with_capacity(n_samples),
        velocity: Vec::with_capacity(n_samples),
    };
    out.value.push(y[0]);
    out.velocity.push(y[1]);
    for w in times.windows(2) {
        solver.integrate(&sys, w[0], w[1], &mut y)?;
        out.value.push(y[0]);
        out.velocity.push(y[1]);
    }
    Ok(out)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct LandauFrequency {
    pub omega: f64,
    /// Magnitude of the stationary order parameter (the sign is free).
    pub phi0: f64,
    /// Set at `q = 0`, where the small-amplitude frequency vanishes.
    pub critical: bool,
}

pub fn landau_frequencies(q: f64, lambda: f64) -> Result<LandauFrequency> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("quartic coupling must be positive"));
    }
    Ok(if q > 0.0 {
        LandauFrequency {
            omega: q.sqrt(),
            phi0: 0.0,
            critical: false,
        }
    } else if q < 0.0 {
        LandauFrequency {
            omega: (2.0 * q.abs()).sqrt(),
            phi0: (-q / lambda).sqrt(),
            critical: false,
        }
    } else {
        LandauFrequency {
            omega: 0.0,
            phi0: 0.0,
            critical: true,
        }
    })
}

/// Angular frequency from mid-level crossings of a sampled oscillation,
/// averaged over all complete periods.
pub fn crossing_frequency(t: &[f64], y: &[f64]) -> Option<f64> {
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return None;
    }
    let mid = 0.5 * (hi + lo);
    let ups: Vec<f64> = t
        .windows(2)
        .zip(y.windows(2))
        .filter(|(_, v)| v[0] < mid && v[1] >= mid)
        .map(|(s, v)| s[0] + (s[1] - s[0]) * (mid - v[0]) / (v[1] - v[0]))
        .collect();
    if ups.len() < 2 {
        return None;
    }
    let period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
    Some(2.0 * PI / period)
}

/// Condensate plus equal-time two-point functions per momentum mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianState {
    pub k: Vec<f64>,
    pub d_phiphi: Vec<f64>,
    pub d_phipi: Vec<f64>,
    pub d_pipi: Vec<f64>,
    pub phi: f64,
    pub velocity: f64,
}

impl GaussianState {
    /// Ground state of free modes with `ω_k² = k² + mass2`.
    pub fn vacuum(k: Vec<f64>, mass2: f64, phi: f64, velocity: f64) -> Result<Self> {
        if !(mass2 > 0.0) {
            return Err(Error::invalid("vacuum needs a positive mass term"));
        }
        let w: Vec<f64> = k.iter().map(|k| (k * k + mass2).sqrt()).collect();
        Ok(GaussianState {
            d_phiphi: w.iter().map(|w| 0.5 / w).collect(),
            d_phipi: vec![0.0; k.len()],
            d_pipi: w.iter().map(|w| 0.5 * w).collect(),
            k,
            phi,
            velocity,
        })
    }

    /// `D_φφ D_ππ − D_φπ²` per mode.
    pub fn uncertainty(&self) -> Vec<f64> {
        (0..self.k.len())
            .map(|i| self.d_phiphi[i] * self.d_pipi[i] - self.d_phipi[i].powi(2))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.k.len();
        if self.d_phiphi.len() != n || self.d_phipi.len() != n || self.d_pipi.len() != n {
            return Err(Error::invalid("Gaussian state arrays differ in length"));
        }
        if self.d_phiphi.iter().chain(&self.d_pipi).any(|&v| v < 0.0) {
            return Err(Error::invalid("Gaussian state has negative variances"));
        }
        if self.uncertainty().iter().any(|&u| u < -1e-12) {
            return Err(Error::invalid("Gaussian state violates the uncertainty bound"));
        }
        Ok(())
    }
}

/// Uniform default momentum grid on `(0, π]`.
pub fn default_k_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| PI * j as f64 / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianTrajectory {
    pub t: Vec<f64>,
    pub states: Vec<GaussianState>,
}

/// Co-evolve the condensate and per-mode correlators with mass
/// `k² + q + 3λφ²`.
pub fn gaussian_evolve(
    state: &GaussianState,
    q: f64,
    lambda: f64,
    t_end: f64,
    tol: f64,
    n_samples: usize,
) -> Result<GaussianTrajectory> {
    check_tol(tol, t_end, n_samples)?;
    state.validate()?;
    let n = state.k.len();
    let k2: Vec<f64> = state.k.iter().map(|k| k * k).collect();
    let sys = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let phi = y[0];
        dy[0] = y[1];
        dy[1] = -(q + lambda * phi * phi) * phi;
        let m = q + 3.0 * lambda * phi * phi;
        for i in 0..n {
            let (a, b, c) = (y[2 + 3 * i], y[3 + 3 * i], y[4 + 3 * i]);
            let m2 = k2[i] + m;
            dy[2 + 3 * i] = 2.0 * b;
            dy[3 + 3 * i] = c - m2 * a;
            dy[4 + 3 * i] = -2.0 * m2 * b;
        }
    };
    let mut y = vec![state.phi, state.velocity];
    for i in 0..n {
        y.extend([state.d_phiphi[i], state.d_phipi[i], state.d_pipi[i]]);
    }
    let unpack = |y: &[f64]| GaussianState {
        k: state.k.clone(),
        phi: y[0],
        velocity: y[1],
        d_phiphi: (0..n).map(|i| y[2 + 3 * i]).collect(),
        d_phipi: (0..n).map(|i| y[3 + 3 * i]).collect(),
        d_pipi: (0..n).map(|i| y[4 + 3 * i]).collect(),
    };
    let mut solver = Dopri5::new(tol * 1e-3, tol * 1e-6);
    let times = sample_times(t_end, n_samples);
    let mut states = vec![unpack(&y)];
    for w in times.windows(2) {
        solver.integrate(&sys, w[0], w[1], &mut y)?;
        states.push(unpack(&y));
    }
    Ok(GaussianTrajectory { t: times, states })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianCorrelation {
    pub t: Vec<f64>,
    pub xi: Vec<f64>,
    pub condensate_fit: Option<FitResult>,
    pub xi_fit: Option<FitResult>,
    /// `ω_ξ / ω_φ` when both fits converged.
    pub ratio: Option<f64>,
}

/// Fit `D_φφ(k)` per time slice for `ξ(t)`, then extract oscillation
/// frequencies of `ξ(t)` and `φ(t)`.
pub fn gaussian_correlation_length(traj: &GaussianTrajectory) -> Result<GaussianCorrelation> {
    let first = traj
        .states
        .first()
        .ok_or_else(|| Error::invalid("empty Gaussian trajectory"))?;
    if first.k.len() < 4 {
        return Err(Error::invalid("correlation length needs at least four modes"));
    }
    let k_min = first.k.iter().copied().fold(f64::INFINITY, f64::min);
    let ceiling = PI / k_min;
    let xi: Vec<f64> = traj
        .states
        .iter()
        .map(|s| {
            let pts: Vec<RadialPoint> = s
                .k
                .iter()
                .zip(&s.d_phiphi)
                .map(|(&k, &d)| RadialPoint { k, s: d, modes: 1 })
                .collect();
            fit_radial(&pts, ceiling, 1.0, LineShape::ThreeHalves).values[0]
        })
        .collect();
    let phi: Vec<f64> = traj.states.iter().map(|s| s.phi).collect();
    let fit = |y: &[f64]| {
        fit_damped_oscillator(&traj.t, y, 0.0)
            .ok()
            .filter(|f| f.values.iter().all(|v| v.is_finite()))
    };
    let condensate_fit = fit(&phi);
    let xi_fit = if xi.iter().all(|v| v.is_finite()) { fit(&xi) } else { None };
    let ratio = match (&condensate_fit, &xi_fit) {
        (Some(a), Some(b)) if a.converged && b.converged => {
            Some(b.get("omega").unwrap_or(f64::NAN) / a.get("omega").unwrap_or(f64::NAN))
        }
        _ => None,
    };
    Ok(GaussianCorrelation {
        t: traj.t.clone(),
        xi,
        condensate_fit,
        xi_fit,
        ratio,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum GaussianPreset {
    /// Quench within the disordered phase from a heavier vacuum.
    Disordered,
    /// Condensate displaced from its ordered minimum; acts as a linear drive.
    Ordered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetRun {
    pub q: f64,
    pub lambda: f64,
    pub t_end: f64,
    pub n_samples: usize,
    pub initial: GaussianState,
}

impl GaussianPreset {
    pub fn build(self) -> PresetRun {
        let k = (0..32).map(|j| PI / 32.0 + (PI - PI / 32.0) * j as f64 / 31.0).collect();
        let (q, lambda, phi) = match self {
            GaussianPreset::Disordered => (1.0, 0.1, 0.1),
            GaussianPreset::Ordered => (-1.0, 1.0, 1.03),
        };
        PresetRun {
            q,
            lambda,
            t_end: 30.0,
            n_samples: 600,
            initial: GaussianState::vacuum(k, 2.0, phi, 0.0).expect("positive mass"),
        }
    }

    pub fn run(self, tol: f64) -> Result<(GaussianTrajectory, GaussianCorrelation)> {
        let p = self.build();
        let traj = gaussian_evolve(&p.initial, p.q, p.lambda, p.t_end, tol, p.n_samples)?;
        let corr = gaussian_correlation_length(&traj)?;
        Ok((traj, corr))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct KzmScales {
    pub t_kz: f64,
    pub xi_kz: f64,
}

/// Freeze-out time and length with unit proportionality constants.
pub fn kzm_scales(tau: f64, t0: f64, l0: f64, nu: f64, z: f64) -> Result<KzmScales> {
    if !(tau > 0.0 && t0 > 0.0 && l0 > 0.0) {
        return Err(Error::invalid("KZM scales need positive tau, t0 and l0"));
    }
    if !(nu > 0.0 && z > 0.0) {
        return Err(Error::invalid("KZM exponents must be positive"));
    }
    let r = tau / t0;
    let d = nu * z + 1.0;
    Ok(KzmScales {
        t_kz: t0 * r.powf(nu * z / d),
        xi_kz: l0 * r.powf(nu / d),
    })
}

/// Coarsening rate `∝ (Δ − Δ_c)^{−ν}` in units of Ω, equal to 1 at
/// `Δ − Δ_c = Ω`.
pub fn coarsening_rate(delta_over_omega: f64, params: &TheoryParams) -> Result<f64> {
    let x = delta_over_omega - params.delta_c_over_omega;
    if !(x > 0.0) {
        return Err(Error::invalid(format!(
            "Δ/Ω = {delta_over_omega} is not above the critical point {}",
            params.delta_c_over_omega
        )));
    }
    Ok(x.powf(-params.nu))
}

/// Scaling function of the hold-time dynamics. Below `x_s` it continues the
/// ramp growth `x^{1/z_d}`; from `x_s` on it is
/// `x_s^{−ν+νz/z_d} (C x − C_s x_s)^{1/z_d}`.
pub fn scaling_function(x: f64, x_s: f64, params: &TheoryParams) -> Result<f64> {
    params.validate()?;
    if !(x > 0.0) || !(x_s >= 1.0) {
        return Err(Error::invalid("scaling function needs x > 0 and x_s ≥ 1"));
    }
    if x < x_s {
        return Ok(x.powf(1.0 / params.z_d));
    }
    let p = params;
    Ok(x_s.powf(-p.nu + p.nu * p.z / p.z_d) * (p.c * x - p.c_s * x_s).powf(1.0 / p.z_d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_limit() {
        let tr = landau_evolve(1.0, 0.0, 0.1, 0.0, 20.0, 1e-9, 401).unwrap();
        for (t, v) in tr.t.iter().zip(&tr.value) {
            assert!((v - 0.1 * t.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn anharmonic_period_matches_quadrature() {
        let (q, lambda, a) = (1.0, 1.0, 0.5);
        let e = landau_energy(q, lambda, a, 0.0);
        // T = 4 ∫_0^a dφ / sqrt(2(E − V)); substitute φ = a sin θ to remove the endpoint singularity
        let n = 20000;
        let mut integral = 0.0;
        for j in 0..n {
            let th = (j as f64 + 0.5) * (PI / 2.0) / n as f64;
            let phi = a * th.sin();
            let v = 0.5 * q * phi * phi + 0.25 * lambda * phi.powi(4);
            integral += a * th.cos() / (2.0 * (e - v)).sqrt() * (PI / 2.0) / n as f64;
        }
        let period = 4.0 * integral;
        let tr = landau_evolve(q, lambda, a, 0.0, 40.0, 1e-10, 40001).unwrap();
        let w = crossing_frequency(&tr.t, &tr.value).unwrap();
        assert!((2.0 * PI / w - period).abs() < 1e-4 * period);
    }

    #[test]
    fn energy_and_time_reversal() {
        let tol = 1e-8;
        let tr = landau_evolve(-1.0, 1.0, 1.3, 0.2, 25.0, tol, 200).unwrap();
        let e0 = landau_energy(-1.0, 1.0, 1.3, 0.2);
        for (p, v) in tr.value.iter().zip(&tr.velocity) {
            assert!((landau_energy(-1.0, 1.0, *p, *v) - e0).abs() <= tol * e0.abs());
        }
        let end = tr.value.len() - 1;
        let back = landau_evolve(-1.0, 1.0, tr.value[end], -tr.velocity[end], 25.0, tol, 2).unwrap();
        assert!((back.value[1] - 1.3).abs() < 10.0 * tol);
        assert!((-back.velocity[1] - 0.2).abs() < 10.0 * tol);
    }

    #[test]
    fn frequency_table() {
        let f = landau_frequencies(4.0, 1.0).unwrap();
        assert_eq!((f.omega, f.phi0), (2.0, 0.0));
        let f = landau_frequencies(-4.0, 1.0).unwrap();
        assert_eq!(f.omega, 8f64.sqrt());
        assert_eq!(f.phi0, 2.0);
        assert!(landau_frequencies(0.0, 1.0).unwrap().critical);
        for q in [0.3, 1.0, 7.0] {
            let r = landau_frequencies(-q, 1.0).unwrap().omega / landau_frequencies(q, 1.0).unwrap().omega;
            assert!((r - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn free_mode_doubles_frequency() {
        let st = GaussianState {
            k: vec![0.0],
            d_phiphi: vec![1.0],
            d_phipi: vec![0.0],
            d_pipi: vec![0.0],
            phi: 0.0,
            velocity: 0.0,
        };
        let tr = gaussian_evolve(&st, 1.0, 0.0, 10.0, 1e-9, 201).unwrap();
        for (t, s) in tr.t.iter().zip(&tr.states) {
            assert!((s.d_phiphi[0] - t.cos().powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn equilibrium_is_stationary_and_invariant_conserved() {
        let st = GaussianState::vacuum(default_k_grid(8), 1.0, 0.0, 0.0).unwrap();
        let tr = gaussian_evolve(&st, 1.0, 0.5, 5.0, 1e-9, 11).unwrap();
        let last = tr.states.last().unwrap();
        for i in 0..8 {
            assert!((last.d_phiphi[i] - st.d_phiphi[i]).abs() < 1e-10);
        }
        let quenched = gaussian_evolve(&st, 0.3, 0.0, 5.0, 1e-9, 11).unwrap();
        for s in &quenched.states {
            for (u, u0) in s.uncertainty().iter().zip(st.uncertainty()) {
                assert!((u - u0).abs() < 1e-8);
            }
            assert!(s.d_phiphi.iter().chain(&s.d_pipi).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn static_state_has_constant_xi() {
        let st = GaussianState::vacuum(default_k_grid(16), 1.0, 0.0, 0.0).unwrap();
        let tr = gaussian_evolve(&st, 1.0, 0.0, 10.0, 1e-9, 40).unwrap();
        let c = gaussian_correlation_length(&tr).unwrap();
        assert!(c.xi.iter().all(|x| (x - c.xi[0]).abs() < 1e-6));
        assert!(c.ratio.is_none());
    }

    #[test]
    fn kzm_examples() {
        let s = kzm_scales(3.0, 3.0, 2.0, NU, Z).unwrap();
        assert!((s.t_kz - 3.0).abs() < 1e-15 && (s.xi_kz - 2.0).abs() < 1e-15);
        let e = NU / (NU + 1.0);
        let a = kzm_scales(1.0, 1.0, 1.0, NU, Z).unwrap();
        let b = kzm_scales(2.0, 1.0, 1.0, NU, Z).unwrap();
        assert!((b.xi_kz / a.xi_kz - 2f64.powf(e)).abs() < 1e-14);
        assert!((e - 0.38612).abs() < 1e-5);
    }

    #[test]
    fn coarsening_rate_examples() {
        let p = TheoryParams::default();
        let at = |d: f64| coarsening_rate(p.delta_c_over_omega + d, &p).unwrap();
        assert!((at(1.0) - 1.0).abs() < 1e-12);
        assert!((at(2.0) - 2f64.powf(-0.629)).abs() < 1e-12);
        assert!((at(0.5) / at(2.0) - 4f64.powf(0.629)).abs() < 1e-12);
        assert!(coarsening_rate(p.delta_c_over_omega, &p).is_err());
    }

    #[test]
    fn scaling_function_examples() {
        let p = TheoryParams {
            c: 1.9,
            c_s: 0.9,
            ..Default::default()
        };
        let f = scaling_function(4.0, 4.0, &p).unwrap();
        assert!((f - 4f64.powf(0.1855)).abs() < 1e-12);
        // ξ² linear in x on the held branch
        let sq = |x: f64| scaling_function(x, 4.0, &p).unwrap().powi(2);
        assert!((sq(6.0) - 2.0 * sq(5.0) + sq(4.0)).abs() < 1e-12);
        assert!(scaling_function(1.0, 0.5, &p).is_err());
    }
}
