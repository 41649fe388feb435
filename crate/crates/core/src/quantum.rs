//! Exact state-vector simulation of the Rydberg Hamiltonian
//! `H = (Ω/2)Σ X_i − Σ (Δ+δ_i) n_i + Σ_{i<j} V_ij n_i n_j` on up to 20 sites.
//!
//! Basis index bit `i` is the occupation of site `i` (row-major), 1 = |r⟩.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::krylov::{cdot, cnorm, expm_apply, lowest_eigenpairs, EigenOptions, ExpmOptions};
use crate::lattice::Lattice;
use crate::ode::{Dopri5, OdeScalar, OdeSystem};
use crate::schedule::{DriveSchedule, Segment};
use crate::snapshot::{Snapshot, SnapshotMeta, SnapshotSet};

pub const DEFAULT_SITE_CAP: usize = 20;
const PAR_CHUNK: usize = 1 << 12;

/// Normalised state vector with its current time (μs).
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<Complex64>,
    n_sites: usize,
    pub time: f64,
}

impl QuantumState {
    /// All atoms in `|g⟩`.
    pub fn ground(n_sites: usize) -> Self {
        Self::basis(n_sites, 0)
    }

    pub fn basis(n_sites: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_sites];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        QuantumState {
            amplitudes,
            n_sites,
            time: 0.0,
        }
    }

    /// Normalises the given amplitudes; rejects a zero vector or a length
    /// that is not a power of two.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("state length {len} is not 2^N")));
        }
        let nrm = cnorm(&amplitudes);
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::invalid("state vector has zero or non-finite norm"));
        }
        Ok(QuantumState {
            amplitudes: amplitudes.into_iter().map(|a| a / nrm).collect(),
            n_sites: len.trailing_zeros() as usize,
            time: 0.0,
        })
    }

    pub fn from_real(v: &[f64]) -> Result<Self> {
        Self::from_amplitudes(v.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        cnorm(&self.amplitudes)
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        for a in &mut self.amplitudes {
            *a /= n;
        }
    }

    pub fn overlap(&self, other: &QuantumState) -> Complex64 {
        cdot(&self.amplitudes, &other.amplitudes)
    }

    pub fn fidelity(&self, other: &QuantumState) -> f64 {
        self.overlap(other).norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Drive parameters of one Hamiltonian application. `local` multiplies the
/// schedule's per-site weights; `v_scale` multiplies the interaction term.
#[derive(Copy, Clone, Debug, PartialEq)]
struct Terms {
    omega: f64,
    delta: f64,
    local: f64,
    v_scale: f64,
}

impl Terms {
    fn at(seg: &Segment, t: f64) -> Self {
        let s = seg.sample(t);
        Terms {
            omega: s.omega,
            delta: s.delta,
            local: s.local,
            v_scale: 1.0,
        }
    }

    /// `a·self + b·other` (the Hamiltonian is linear in its parameters).
    fn combine(self, a: f64, other: Terms, b: f64) -> Self {
        Terms {
            omega: a * self.omega + b * other.omega,
            delta: a * self.delta + b * other.delta,
            local: a * self.local + b * other.local,
            v_scale: a * self.v_scale + b * other.v_scale,
        }
    }

    fn scaled(self, c: f64) -> Self {
        self.combine(c, self, 0.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Fourth-order commutator-free Magnus steps with Krylov exponentials.
    #[default]
    Magnus,
    /// Dormand–Prince 5(4) on `i dψ/dt = Hψ` with per-step renormalisation.
    RungeKutta,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Local error target per step.
    pub tolerance: f64,
    pub integrator: Integrator,
    pub krylov_dim: usize,
}

impl EvolveOptions {
    pub fn new(tolerance: f64) -> Self {
        EvolveOptions {
            tolerance,
            integrator: Integrator::Magnus,
            krylov_dim: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub energies: Vec<f64>,
    /// `E_1 − E_0`.
    pub gap_1: f64,
    /// `E_2 − E_0`, when at least three levels were requested.
    pub gap_2: Option<f64>,
    pub states: Option<Vec<Vec<f64>>>,
    pub residuals: Vec<f64>,
}

impl SpectrumResult {
    pub fn state(&self, k: usize) -> Option<QuantumState> {
        self.states
            .as_ref()
            .and_then(|s| s.get(k))
            .and_then(|v| QuantumState::from_real(v).ok())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    Occupation(usize),
    /// Per-site staggered magnetisation `(1/N) Σ (−1)^{x+y} (2n−1)`.
    StaggeredMagnetization,
    /// `⟨m_s²⟩` in the same per-site units.
    StaggeredMagnetizationSquared,
    /// Mean `⟨n_i n_j⟩` over nearest-neighbour bonds.
    NearestNeighborDoubleOccupancy,
    /// Diagonal energy `−Δ Σ (n_i − 1) + Σ V_ij n_i n_j` over the whole lattice.
    ClassicalEnergy { delta: f64 },
    Energy { omega: f64, delta: f64, local_deltas: Vec<f64> },
    /// Connected `⟨Z̃_i Z̃_j⟩ − ⟨Z̃_i⟩⟨Z̃_j⟩` of staggered spins.
    ConnectedZz(usize, usize),
}

/// Matrix-free Hamiltonian for a fixed lattice.
#[derive(Clone, Debug)]
pub struct ExactEngine {
    lattice: Lattice,
    interaction: Vec<f64>,
    even_mask: usize,
}

impl ExactEngine {
    pub fn new(lattice: Lattice) -> Result<Self> {
        Self::with_cap(lattice, DEFAULT_SITE_CAP)
    }

    pub fn with_cap(lattice: Lattice, cap: usize) -> Result<Self> {
        let n = lattice.len();
        if n > cap || n >= usize::BITS as usize - 1 {
            return Err(Error::invalid(format!(
                "{n} sites exceed the exact-engine cap of {cap}"
            )));
        }
        let dim = 1usize << n;
        let pairs: Vec<(usize, f64)> = lattice
            .pairs()
            .iter()
            .map(|p| ((1 << p.i) | (1 << p.j), p.strength))
            .collect();
        let interaction = (0..dim)
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|s| {
                pairs
                    .iter()
                    .filter(|(m, _)| s & m == *m)
                    .map(|(_, v)| v)
                    .sum()
            })
            .collect();
        let even_mask = (0..n)
            .filter(|&i| lattice.parity(i) == 1)
            .fold(0usize, |m, i| m | (1 << i));
        Ok(ExactEngine {
            lattice,
            interaction,
            even_mask,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.lattice.len()
    }

    /// `Σ_{i<j} V_ij n_i n_j` of each basis state.
    pub fn interaction_energies(&self) -> &[f64] {
        &self.interaction
    }

    fn check_state(&self, state: &QuantumState) -> Result<()> {
        if state.n_sites != self.n_sites() {
            return Err(Error::invalid(format!(
                "state has {} sites, lattice has {}",
                state.n_sites,
                self.n_sites()
            )));
        }
        Ok(())
    }

    /// `Σ_i w_i n_i` for each basis state.
    fn site_sums(&self, weights: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        (0..dim)
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|s| {
                let mut acc = 0.0;
                let mut bits = s;
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    acc += weights[i];
                    bits &= bits - 1;
                }
                acc
            })
            .collect()
    }

    fn apply_terms<T: OdeScalar>(&self, terms: Terms, local_diag: Option<&[f64]>, x: &[T], y: &mut [T]) {
        let n = self.n_sites();
        let half = 0.5 * terms.omega;
        let inter = &self.interaction;
        let kernel = |offset: usize, out: &mut [T]| {
            for (k, o) in out.iter_mut().enumerate() {
                let s = offset + k;
                let mut diag = -terms.delta * s.count_ones() as f64 + terms.v_scale * inter[s];
                if let Some(w) = local_diag {
                    diag -= terms.local * w[s];
                }
                let mut acc = x[s] * diag;
                if half != 0.0 {
                    let mut flips = T::default();
                    for i in 0..n {
                        flips = flips + x[s ^ (1 << i)];
                    }
                    acc = acc + flips * half;
                }
                *o = acc;
            }
        };
        if y.len() >= 2 * PAR_CHUNK {
            y.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(c, out)| kernel(c * PAR_CHUNK, out));
        } else {
            kernel(0, y);
        }
    }

    /// Unnormalised image `H|ψ⟩` for explicit per-site detunings.
    pub fn apply_hamiltonian(
        &self,
        state: &QuantumState,
        omega: f64,
        delta: f64,
        local_deltas: &[f64],
    ) -> Result<Vec<Complex64>> {
        self.check_state(state)?;
        let local = self.local_diag(local_deltas)?;
        let terms = Terms {
            omega,
            delta,
            local: 1.0,
            v_scale: 1.0,
        };
        let mut out = vec![Complex64::new(0.0, 0.0); state.dim()];
        self.apply_terms(terms, local.as_deref(), &state.amplitudes, &mut out);
        Ok(out)
    }

    fn local_diag(&self, weights: &[f64]) -> Result<Option<Vec<f64>>> {
        if weights.is_empty() {
            return Ok(None);
        }
        if weights.len() != self.n_sites() {
            return Err(Error::invalid(format!(
                "{} local detunings for {} sites",
                weights.len(),
                self.n_sites()
            )));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(None);
        }
        Ok(Some(self.site_sums(weights)))
    }

    /// Evolve from `t0` to `t1` under `schedule`.
    pub fn evolve(
        &self,
        state: &mut QuantumState,
        schedule: &DriveSchedule,
        t0: f64,
        t1: f64,
        tolerance: f64,
    ) -> Result<()> {
        self.evolve_with(state, schedule, t0, t1, EvolveOptions::new(tolerance))
    }

    pub fn evolve_with(
        &self,
        state: &mut QuantumState,
        schedule: &DriveSchedule,
        t0: f64,
        t1: f64,
        opts: EvolveOptions,
    ) -> Result<()> {
        self.check_state(state)?;
        if !(opts.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        let total = schedule.total_time();
        if !(t0 >= 0.0 && t1 >= t0 && t1 <= total * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::invalid(format!(
                "evolution window [{t0}, {t1}] outside schedule [0, {total}]"
            )));
        }
        let local = self.local_diag(schedule.local_pattern())?;
        let local = local.as_deref();
        for piece in schedule.pieces(t0, t1) {
            match opts.integrator {
                Integrator::Magnus => self.magnus_piece(state, &piece, local, opts)?,
                Integrator::RungeKutta => self.rk_piece(state, &piece, local, opts)?,
            }
        }
        state.normalize();
        state.time = t1;
        Ok(())
    }

    fn expm(
        &self,
        psi: &mut [Complex64],
        terms: Terms,
        local: Option<&[f64]>,
        tau: f64,
        tol: f64,
        krylov_dim: usize,
    ) -> Result<usize> {
        let apply = |x: &[Complex64], y: &mut [Complex64]| self.apply_terms(terms, local, x, y);
        expm_apply(
            apply,
            psi,
            tau,
            ExpmOptions {
                tolerance: tol,
                max_dim: krylov_dim,
            },
        )
    }

    /// One commutator-free fourth-order Magnus step of length `h` from `t`.
    fn cf4_step(
        &self,
        psi: &mut [Complex64],
        seg: &Segment,
        local: Option<&[f64]>,
        t: f64,
        h: f64,
        tol: f64,
        krylov_dim: usize,
    ) -> Result<()> {
        let r3 = 3f64.sqrt();
        let h1 = Terms::at(seg, t + (0.5 - r3 / 6.0) * h);
        let h2 = Terms::at(seg, t + (0.5 + r3 / 6.0) * h);
        let a1 = 0.25 - r3 / 6.0;
        let a2 = 0.25 + r3 / 6.0;
        // each exponent has interaction weight a1 + a2 = 1/2; rescale to 1
        let first = h2.combine(a1, h1, a2).scaled(2.0);
        let second = h1.combine(a1, h2, a2).scaled(2.0);
        self.expm(psi, first, local, 0.5 * h, tol, krylov_dim)?;
        self.expm(psi, second, local, 0.5 * h, tol, krylov_dim)?;
        Ok(())
    }

    fn magnus_piece(
        &self,
        state: &mut QuantumState,
        seg: &Segment,
        local: Option<&[f64]>,
        opts: EvolveOptions,
    ) -> Result<()> {
        let dur = seg.duration();
        if dur <= 0.0 {
            return Ok(());
        }
        if seg.is_constant() {
            let terms = Terms::at(seg, seg.t_start);
            self.expm(&mut state.amplitudes, terms, local, dur, opts.tolerance, opts.krylov_dim)?;
            return Ok(());
        }
        let tol = opts.tolerance;
        let ktol = 0.01 * tol;
        let mut t = seg.t_start;
        let mut h = dur.min(0.05 * dur.max(1e-3));
        let (mut accepted, mut rejected) = (0usize, 0usize);
        let mut coarse = state.amplitudes.clone();
        let mut fine = state.amplitudes.clone();
        while t < seg.t_end {
            let remaining = seg.t_end - t;
            let mut step = h.min(remaining);
            if remaining - step < 1e-12 * dur {
                step = remaining;
            }
            coarse.copy_from_slice(&state.amplitudes);
            fine.copy_from_slice(&state.amplitudes);
            self.cf4_step(&mut coarse, seg, local, t, step, ktol, opts.krylov_dim)?;
            self.cf4_step(&mut fine, seg, local, t, 0.5 * step, ktol, opts.krylov_dim)?;
            self.cf4_step(&mut fine, seg, local, t + 0.5 * step, 0.5 * step, ktol, opts.krylov_dim)?;
            let diff: f64 = coarse
                .iter()
                .zip(&fine)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let err = diff / 15.0;
            let fac = if err == 0.0 {
                4.0
            } else {
                (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0)
            };
            if err <= tol {
                state.amplitudes.copy_from_slice(&fine);
                t = if step == remaining { seg.t_end } else { t + step };
                accepted += 1;
                h = step * fac;
            } else {
                rejected += 1;
                h = step * fac.min(0.9);
                if h < 1e-14 * dur.max(1.0) {
                    return Err(Error::IntegrationFailure {
                        t,
                        step: h,
                        accepted,
                        rejected,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn rk_piece(
        &self,
        state: &mut QuantumState,
        seg: &Segment,
        local: Option<&[f64]>,
        opts: EvolveOptions,
    ) -> Result<()> {
        struct Schrodinger<'a> {
            engine: &'a ExactEngine,
            seg: &'a Segment,
            local: Option<&'a [f64]>,
        }
        impl OdeSystem<Complex64> for Schrodinger<'_> {
            fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]) {
                self.engine
                    .apply_terms(Terms::at(self.seg, t), self.local, y, dy);
                for d in dy.iter_mut() {
                    *d = Complex64::new(d.im, -d.re);
                }
            }
            fn project(&self, y: &mut [Complex64]) {
                let n = cnorm(y);
                for v in y.iter_mut() {
                    *v /= n;
                }
            }
            fn projects(&self) -> bool {
                true
            }
        }
        let sys = Schrodinger {
            engine: self,
            seg,
            local,
        };
        let mut ode = Dopri5::new(opts.tolerance, opts.tolerance);
        ode.integrate(&sys, seg.t_start, seg.t_end, &mut state.amplitudes)
    }

    /// Lowest `n_states` levels of the uniform-drive Hamiltonian.
    pub fn ground_state_and_gaps(&self, omega: f64, delta: f64, n_states: usize) -> Result<SpectrumResult> {
        if n_states < 2 {
            return Err(Error::invalid("n_states must be at least 2"));
        }
        let dim = self.dim();
        if n_states > dim {
            return Err(Error::invalid(format!("{n_states} states requested from a {dim}-dimensional space")));
        }
        let terms = Terms {
            omega,
            delta,
            local: 0.0,
            v_scale: 1.0,
        };
        let n = self.n_sites() as f64;
        let norm_est = self
            .interaction
            .iter()
            .enumerate()
            .map(|(s, v)| (v - delta * s.count_ones() as f64).abs())
            .fold(0.0, f64::max)
            + 0.5 * omega.abs() * n;
        let opts = EigenOptions {
            n_states,
            tolerance: 1e-8 * norm_est.max(f64::MIN_POSITIVE),
            max_basis: if dim <= 1 << 16 { 80 } else { 40 },
            max_iterations: 20_000,
            seed: 0x5eed,
        };
        let apply = |x: &[f64], y: &mut [f64]| self.apply_terms(terms, None, x, y);
        let pairs = lowest_eigenpairs(apply, dim, &opts)?;
        let e0 = pairs.values[0];
        Ok(SpectrumResult {
            gap_1: (pairs.values[1] - e0).max(0.0),
            gap_2: pairs.values.get(2).map(|e| (e - e0).max(0.0)),
            energies: pairs.values,
            states: Some(pairs.vectors),
            residuals: pairs.residuals,
        })
    }

    fn staggered_value(&self, s: usize) -> f64 {
        let n = self.n_sites();
        let even = self.even_mask.count_ones() as i64;
        let odd = n as i64 - even;
        let ne = (s & self.even_mask).count_ones() as i64;
        let no = (s & !self.even_mask).count_ones() as i64;
        ((2 * ne - even) - (2 * no - odd)) as f64 / n as f64
    }

    fn expect_diag(&self, state: &QuantumState, f: impl Fn(usize) -> f64 + Sync) -> f64 {
        // fixed chunking keeps the summation order independent of thread count
        let partial: Vec<f64> = state
            .amplitudes
            .par_chunks(PAR_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a.norm_sqr() * f(c * PAR_CHUNK + k))
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum()
    }

    pub fn measure(&self, state: &QuantumState, observable: &Observable) -> Result<f64> {
        self.check_state(state)?;
        let n = self.n_sites();
        let site = |i: usize| -> Result<()> {
            if i >= n {
                Err(Error::invalid(format!("site {i} outside lattice of {n} sites")))
            } else {
                Ok(())
            }
        };
        let value = match observable {
            Observable::Occupation(i) => {
                site(*i)?;
                self.expect_diag(state, |s| ((s >> i) & 1) as f64)
            }
            Observable::StaggeredMagnetization => self.expect_diag(state, |s| self.staggered_value(s)),
            Observable::StaggeredMagnetizationSquared => {
                self.expect_diag(state, |s| self.staggered_value(s).powi(2))
            }
            Observable::NearestNeighborDoubleOccupancy => {
                let bonds: Vec<usize> = self
                    .lattice
                    .pairs()
                    .iter()
                    .filter(|p| p.dist2 == 1)
                    .map(|p| (1 << p.i) | (1 << p.j))
                    .collect();
                if bonds.is_empty() {
                    0.0
                } else {
                    let nb = bonds.len() as f64;
                    self.expect_diag(state, |s| {
                        bonds.iter().filter(|&&m| s & m == m).count() as f64 / nb
                    })
                }
            }
            Observable::ClassicalEnergy { delta } => self.expect_diag(state, |s| {
                -delta * (s.count_ones() as f64 - n as f64) + self.interaction[s]
            }),
            Observable::Energy {
                omega,
                delta,
                local_deltas,
            } => {
                let h = self.apply_hamiltonian(state, *omega, *delta, local_deltas)?;
                cdot(&state.amplitudes, &h).re
            }
            Observable::ConnectedZz(i, j) => {
                site(*i)?;
                site(*j)?;
                let pi = self.lattice.parity(*i) as f64;
                let pj = self.lattice.parity(*j) as f64;
                let z = |s: usize, k: usize| 2.0 * ((s >> k) & 1) as f64 - 1.0;
                let zi = pi * self.expect_diag(state, |s| z(s, *i));
                let zj = pj * self.expect_diag(state, |s| z(s, *j));
                let zz = pi * pj * self.expect_diag(state, |s| z(s, *i) * z(s, *j));
                zz - zi * zj
            }
        };
        Ok(value)
    }

    /// All site occupations `⟨n_i⟩`.
    pub fn occupations(&self, state: &QuantumState) -> Result<Vec<f64>> {
        (0..self.n_sites())
            .map(|i| self.measure(state, &Observable::Occupation(i)))
            .collect()
    }

    /// I.i.d. projective readouts of `state`; deterministic for a fixed seed.
    pub fn sample_snapshots(&self, state: &QuantumState, n_shots: usize, seed: u64) -> Result<SnapshotSet> {
        self.check_state(state)?;
        if n_shots == 0 {
            return Err(Error::invalid("n_shots must be at least 1"));
        }
        let mut cdf = Vec::with_capacity(state.dim());
        let mut acc = 0.0;
        for a in &state.amplitudes {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let total = acc;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.lattice.width(), self.lattice.height());
        let last = state.dim() - 1;
        let shots = (0..n_shots)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let k = cdf.partition_point(|&c| c <= u).min(last);
                Snapshot::from_basis(w, h, k)
            })
            .collect();
        let mut meta = SnapshotMeta::new();
        meta.seed = Some(seed);
        meta.hold_time = Some(state.time);
        SnapshotSet::new(w, h, shots, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, Cutoff};
    use crate::schedule::Ramp;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn chain(n: usize, v: f64) -> ExactEngine {
        let l = Lattice::new(n, 1, 1.0, v, Boundary::Open, Cutoff::Nearest).unwrap();
        ExactEngine::new(l).unwrap()
    }

    fn dense(engine: &ExactEngine, omega: f64, delta: f64, local: &[f64]) -> DMatrix<f64> {
        // built element by element from the operator definition
        let dim = engine.dim();
        let n = engine.n_sites();
        let mut m = DMatrix::zeros(dim, dim);
        for s in 0..dim {
            let mut d = 0.0;
            for i in 0..n {
                if (s >> i) & 1 == 1 {
                    d -= delta + local.get(i).copied().unwrap_or(0.0);
                }
                m[(s ^ (1 << i), s)] += omega / 2.0;
            }
            for p in engine.lattice().pairs() {
                if (s >> p.i) & 1 == 1 && (s >> p.j) & 1 == 1 {
                    d += p.strength;
                }
            }
            m[(s, s)] = d;
        }
        m
    }

    #[test]
    fn single_site_matrix_elements() {
        let e = chain(1, 1.0);
        let g = QuantumState::ground(1);
        let r = QuantumState::basis(1, 1);
        let hr = e.apply_hamiltonian(&r, 2.0, 0.0, &[]).unwrap();
        assert_eq!(hr[0], Complex64::new(1.0, 0.0));
        assert_eq!(hr[1], Complex64::new(0.0, 0.0));
        let hr = e.apply_hamiltonian(&r, 0.0, 3.0, &[]).unwrap();
        assert_eq!(hr[1], Complex64::new(-3.0, 0.0));
        let hg = e.apply_hamiltonian(&g, 0.0, 3.0, &[]).unwrap();
        assert_eq!(hg[0], Complex64::new(0.0, 0.0));
        assert!(e.apply_hamiltonian(&g, 0.0, 0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pair_diagonal_energy() {
        let e = chain(2, 7.0);
        let rr = QuantumState::basis(2, 0b11);
        let h = e.apply_hamiltonian(&rr, 0.0, 1.5, &[]).unwrap();
        assert!((h[3].re - (-2.0 * 1.5 + 7.0)).abs() < 1e-15);
    }

    #[test]
    fn apply_matches_dense_matrix() {
        let l = Lattice::new(3, 2, 1.0, 5.0, Boundary::Open, Cutoff::ThirdNearest).unwrap();
        let e = ExactEngine::new(l).unwrap();
        let local = [0.0, -0.3, 0.2, 0.0, 1.1, 0.0];
        let m = dense(&e, 1.3, 0.7, &local);
        let amps: Vec<Complex64> = (0..64)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()))
            .collect();
        let psi = QuantumState::from_amplitudes(amps).unwrap();
        let h = e.apply_hamiltonian(&psi, 1.3, 0.7, &local).unwrap();
        for r in 0..64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..64 {
                acc += m[(r, c)] * psi.amplitudes()[c];
            }
            assert!((acc - h[r]).norm() < 1e-12);
        }
    }

    #[test]
    fn rabi_oscillation() {
        let e = chain(1, 1.0);
        let om = 2.0;
        let sched = DriveSchedule::constant(om, 0.0, 5.0).unwrap();
        for integ in [Integrator::Magnus, Integrator::RungeKutta] {
            let mut psi = QuantumState::ground(1);
            let mut t = 0.0;
            let opts = EvolveOptions {
                integrator: integ,
                ..EvolveOptions::new(1e-10)
            };
            for k in 1..=20 {
                let t1 = 0.25 * k as f64;
                e.evolve_with(&mut psi, &sched, t, t1, opts).unwrap();
                t = t1;
                let n = e.measure(&psi, &Observable::Occupation(0)).unwrap();
                assert!((n - (om * t / 2.0).sin().powi(2)).abs() < 1e-8, "{integ:?} t={t}");
            }
        }
    }

    #[test]
    fn detuning_phase_without_drive() {
        let e = chain(1, 1.0);
        let sched = DriveSchedule::constant(0.0, 1.7, 2.0).unwrap();
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut psi = QuantumState::from_amplitudes(vec![amp, amp]).unwrap();
        e.evolve(&mut psi, &sched, 0.0, 2.0, 1e-12).unwrap();
        let a = psi.amplitudes();
        assert!((a[0] - amp).norm() < 1e-12);
        // H|r⟩ = −Δ|r⟩, so the |r⟩ amplitude picks up e^{+iΔt}
        assert!((a[1] - amp * Complex64::from_polar(1.0, 1.7 * 2.0)).norm() < 1e-10);
    }

    #[test]
    fn blockaded_pair_oscillates_at_root_two() {
        let om = 1.0;
        let e = chain(2, 50.0);
        let sched = DriveSchedule::constant(om, 0.0, 10.0).unwrap();
        let m = dense(&e, om, 0.0, &[]);
        let eig = SymmetricEigen::new(m);
        let mut psi = QuantumState::ground(2);
        let mut t = 0.0;
        for k in 1..=10 {
            let t1 = k as f64;
            e.evolve(&mut psi, &sched, t, t1, 1e-10).unwrap();
            t = t1;
            // dense oracle: |c_gg|² from the 4×4 spectral decomposition
            let mut c = Complex64::new(0.0, 0.0);
            for j in 0..4 {
                let q = eig.eigenvectors[(0, j)];
                c += q * q * Complex64::from_polar(1.0, -eig.eigenvalues[j] * t);
            }
            assert!((psi.amplitudes()[0].norm_sqr() - c.norm_sqr()).abs() < 1e-8);
        }
        // near-perfect blockade: p_gg ≈ cos²(√2 Ω t / 2)
        let mut psi = QuantumState::ground(2);
        let t_half = std::f64::consts::PI / (2f64.sqrt() * om);
        e.evolve(&mut psi, &sched, 0.0, t_half, 1e-10).unwrap();
        assert!(psi.amplitudes()[0].norm_sqr() < 1e-3);
    }

    #[test]
    fn ramp_matches_between_integrators() {
        let l = Lattice::new(2, 2, 1.0, 3.0, Boundary::Open, Cutoff::ThirdNearest).unwrap();
        let e = ExactEngine::new(l).unwrap();
        let mut sched = DriveSchedule::new(
            vec![Segment {
                t_start: 0.0,
                t_end: 0.3,
                omega: Ramp::linear(0.0, 1.5),
                delta: Ramp::constant(-2.0),
                local: Ramp::constant(0.0),
            }],
            vec![],
        )
        .unwrap();
        sched.push(2.0, Ramp::constant(1.5), Ramp::linear(-2.0, 3.0), Ramp::constant(0.0)).unwrap();
        let mut a = QuantumState::ground(4);
        let mut b = QuantumState::ground(4);
        e.evolve(&mut a, &sched, 0.0, 2.3, 1e-11).unwrap();
        let rk = EvolveOptions {
            integrator: Integrator::RungeKutta,
            ..EvolveOptions::new(1e-11)
        };
        e.evolve_with(&mut b, &sched, 0.0, 2.3, rk).unwrap();
        assert!(1.0 - a.fidelity(&b) < 1e-9);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_gap() {
        let e = chain(1, 1.0);
        let s = e.ground_state_and_gaps(1.3, 0.4, 2).unwrap();
        assert!((s.gap_1 - (1.3f64.powi(2) + 0.4f64.powi(2)).sqrt()).abs() < 1e-9);
        assert!(s.gap_2.is_none());
    }

    #[test]
    fn spectrum_matches_dense_diagonalisation() {
        let l = Lattice::new(2, 2, 1.0, 2.0, Boundary::Periodic, Cutoff::ThirdNearest).unwrap();
        let e = ExactEngine::new(l).unwrap();
        let s = e.ground_state_and_gaps(1.0, 3.0, 4).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(dense(&e, 1.0, 3.0, &[])).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for k in 0..4 {
            assert!((s.energies[k] - ev[k]).abs() < 1e-9, "{k}: {} vs {}", s.energies[k], ev[k]);
        }
        assert!((s.gap_1 - (ev[1] - ev[0])).abs() < 1e-9);
        assert!((s.gap_2.unwrap() - (ev[2] - ev[0])).abs() < 1e-9);
    }

    #[test]
    fn staggered_magnetisation_conventions() {
        let l = Lattice::new(4, 4, 1.0, 1.0, Boundary::Open, Cutoff::Nearest).unwrap();
        let e = ExactEngine::new(l).unwrap();
        let af1 = (0..16).filter(|&i| e.lattice().parity(i) == 1).fold(0, |m, i| m | (1 << i));
        let ms = |k| e.measure(&QuantumState::basis(16, k), &Observable::StaggeredMagnetization).unwrap();
        assert_eq!(ms(af1), 1.0);
        assert_eq!(ms(0), 0.0);
        assert_eq!(ms(af1 ^ 0xffff), -1.0);
    }

    #[test]
    fn classical_energy_and_correlator() {
        let e = chain(3, 4.0);
        // |r g r⟩: −Δ(2 − 3) + 0
        let psi = QuantumState::basis(3, 0b101);
        let h = e.measure(&psi, &Observable::ClassicalEnergy { delta: 2.0 }).unwrap();
        assert!((h - 2.0).abs() < 1e-15);
        assert_eq!(e.measure(&psi, &Observable::ConnectedZz(0, 2)).unwrap(), 0.0);
        // equal superposition of |rgr⟩ and |grg⟩ is perfectly correlated
        let cat = QuantumState::from_real(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((e.measure(&cat, &Observable::ConnectedZz(0, 1)).unwrap() - 1.0).abs() < 1e-12);
        assert!(e.measure(&cat, &Observable::Occupation(5)).is_err());
    }

    #[test]
    fn sampling_statistics_and_determinism() {
        let e = chain(1, 1.0);
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let psi = QuantumState::from_amplitudes(vec![amp, amp]).unwrap();
        let a = e.sample_snapshots(&psi, 10_000, 7).unwrap();
        let b = e.sample_snapshots(&psi, 10_000, 7).unwrap();
        assert_eq!(a, b);
        let f = a.mean_occupation()[0];
        assert!((f - 0.5).abs() < 0.015, "{f}");
        let basis = e.sample_snapshots(&QuantumState::basis(1, 1), 20, 1).unwrap();
        assert!(basis.shots().iter().all(|s| s.get(0, 0) == 1));
    }

    #[test]
    fn rejects_oversized_lattice() {
        let l = Lattice::new(5, 5, 1.0, 1.0, Boundary::Open, Cutoff::Nearest).unwrap();
        assert!(ExactEngine::new(l).is_err());
    }
}
