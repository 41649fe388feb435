//! Site-factorised (product-state) energy minimisation and dynamics.
//!
//! Each atom is a Bloch vector `s_i` with `n_i = (1 + s_z,i)/2`. The mean-field
//! energy is
//! `E = Σ_i [(Ω/2) s_x,i − (Δ+δ_i)(1+s_z,i)/2] + Σ_{i<j} V_ij (1+s_z,i)(1+s_z,j)/4`
//! and each vector precesses as `ds_i/dt = B_i × s_i` in the effective field
//! `B_i = (Ω, 0, −(Δ+δ_i) + Σ_j V_ij (1+s_z,j)/2) = 2 ∂E/∂s_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::ode::{Dopri5, OdeSystem};
use crate::schedule::{DriveSchedule, Segment};
use crate::snapshot::{Snapshot, SnapshotMeta, SnapshotSet};

pub type Bloch = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    bloch: Vec<Bloch>,
    pub time: f64,
}

impl ProductState {
    /// Normalises every vector; rejects zero vectors.
    pub fn new(bloch: Vec<Bloch>) -> Result<Self> {
        let mut out = Vec::with_capacity(bloch.len());
        for (i, b) in bloch.into_iter().enumerate() {
            let n = norm(&b);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid(format!("Bloch vector {i} has zero or non-finite norm")));
            }
            out.push([b[0] / n, b[1] / n, b[2] / n]);
        }
        Ok(ProductState { bloch: out, time: 0.0 })
    }

    /// Every atom in `|g⟩`.
    pub fn ground(n_sites: usize) -> Self {
        ProductState {
            bloch: vec![[0.0, 0.0, -1.0]; n_sites],
            time: 0.0,
        }
    }

    /// Classical configuration: `s_z = +1` where `rydberg[i]`.
    pub fn classical(rydberg: &[bool]) -> Self {
        ProductState {
            bloch: rydberg
                .iter()
                .map(|&r| [0.0, 0.0, if r { 1.0 } else { -1.0 }])
                .collect(),
            time: 0.0,
        }
    }

    pub fn bloch(&self) -> &[Bloch] {
        &self.bloch
    }

    pub fn len(&self) -> usize {
        self.bloch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bloch.is_empty()
    }

    pub fn occupations(&self) -> Vec<f64> {
        self.bloch.iter().map(|b| 0.5 * (1.0 + b[2])).collect()
    }

    /// Local staggered magnetisation `(−1)^{x+y} s_z` per site.
    pub fn staggered_map(&self, lattice: &Lattice) -> Vec<f64> {
        self.bloch
            .iter()
            .enumerate()
            .map(|(i, b)| lattice.parity(i) as f64 * b[2])
            .collect()
    }

    /// Largest deviation of any Bloch norm from 1.
    pub fn norm_error(&self) -> f64 {
        self.bloch
            .iter()
            .map(|b| (norm(b) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn norm(b: &Bloch) -> f64 {
    (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
}

fn check_len(lattice: &Lattice, n: usize, what: &str) -> Result<()> {
    if n != lattice.len() {
        return Err(Error::invalid(format!(
            "{what} has {n} entries for {} sites",
            lattice.len()
        )));
    }
    Ok(())
}

/// Effective fields `B_i` for per-site detunings `Δ + δ_i`.
fn fields(lattice: &Lattice, omega: f64, detunings: &[f64], sz: impl Fn(usize) -> f64, out: &mut [Bloch]) {
    for (i, b) in out.iter_mut().enumerate() {
        let mut z = -detunings[i];
        for &(j, v) in lattice.couplings(i) {
            z += v * 0.5 * (1.0 + sz(j));
        }
        *b = [omega, 0.0, z];
    }
}

/// Mean-field energy of `state` with per-site detunings `Δ + δ_i`.
pub fn meanfield_energy(lattice: &Lattice, omega: f64, detunings: &[f64], state: &ProductState) -> Result<f64> {
    check_len(lattice, state.len(), "state")?;
    check_len(lattice, detunings.len(), "detunings")?;
    let s = &state.bloch;
    let mut e = 0.0;
    for i in 0..s.len() {
        e += 0.5 * omega * s[i][0] - detunings[i] * 0.5 * (1.0 + s[i][2]);
    }
    for p in lattice.pairs() {
        e += p.strength * 0.25 * (1.0 + s[p.i][2]) * (1.0 + s[p.j][2]);
    }
    Ok(e)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum MinimizeMode {
    /// One Bloch angle per sublattice.
    #[default]
    Sublattice,
    /// Independent site angles, seeded from the sublattice optimum.
    PerSite,
}

#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    pub mode: MinimizeMode,
    /// Exit threshold on the gradient norm per site.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub grid: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            mode: MinimizeMode::Sublattice,
            gradient_tolerance: 1e-8,
            max_iterations: 10_000,
            grid: 96,
        }
    }
}

/// Minimise the mean-field energy with `pinned` sites held in `|g⟩`.
pub fn meanfield_minimize(lattice: &Lattice, omega: f64, delta: f64, pinned: &[usize]) -> Result<ProductState> {
    meanfield_minimize_with(lattice, omega, delta, pinned, &MinimizeOptions::default())
}

pub fn meanfield_minimize_with(
    lattice: &Lattice,
    omega: f64,
    delta: f64,
    pinned: &[usize],
    opts: &MinimizeOptions,
) -> Result<ProductState> {
    let n = lattice.len();
    let mut is_pinned = vec![false; n];
    for &p in pinned {
        if p >= n {
            return Err(Error::invalid(format!("pinned site {p} outside lattice")));
        }
        is_pinned[p] = true;
    }
    let det = vec![delta; n];
    let state_of = |ta: f64, tb: f64| -> Vec<Bloch> {
        (0..n)
            .map(|i| {
                if is_pinned[i] {
                    [0.0, 0.0, -1.0]
                } else {
                    let th = if lattice.parity(i) == 1 { ta } else { tb };
                    [th.sin(), 0.0, th.cos()]
                }
            })
            .collect()
    };
    let mut b = vec![[0.0; 3]; n];
    // energy and ∂E/∂θ for the two sublattice angles
    let eval = |ta: f64, tb: f64, b: &mut Vec<Bloch>| -> (f64, [f64; 2]) {
        let s = state_of(ta, tb);
        let st = ProductState { bloch: s, time: 0.0 };
        let e = meanfield_energy(lattice, omega, &det, &st).expect("sizes checked");
        fields(lattice, omega, &det, |j| st.bloch[j][2], b);
        let mut g = [0.0; 2];
        for i in 0..n {
            if is_pinned[i] {
                continue;
            }
            let th = if lattice.parity(i) == 1 { ta } else { tb };
            let d = 0.5 * (b[i][0] * th.cos() - b[i][2] * th.sin());
            g[usize::from(lattice.parity(i) != 1)] += d;
        }
        (e, g)
    };

    let grid = opts.grid.max(8);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for a in 0..grid {
        for c in 0..grid {
            let ta = -std::f64::consts::PI + two_pi * a as f64 / grid as f64;
            let tb = -std::f64::consts::PI + two_pi * c as f64 / grid as f64;
            let (e, _) = eval(ta, tb, &mut b);
            if e < best.0 {
                best = (e, ta, tb);
            }
        }
    }
    let (mut e, mut ta, mut tb) = best;
    let free = (0..n).filter(|&i| !is_pinned[i]).count().max(1) as f64;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (_, g) = eval(ta, tb, &mut b);
        gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gnorm / free <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        // finite-difference Hessian of the analytic gradient
        let h = 1e-5;
        let (_, ga) = eval(ta + h, tb, &mut b);
        let (_, gb) = eval(ta, tb + h, &mut b);
        let mut hm = [
            [(ga[0] - g[0]) / h, (gb[0] - g[0]) / h],
            [(ga[1] - g[1]) / h, (gb[1] - g[1]) / h],
        ];
        let sym = 0.5 * (hm[0][1] + hm[1][0]);
        hm[0][1] = sym;
        hm[1][0] = sym;
        let det_h = hm[0][0] * hm[1][1] - sym * sym;
        let mut step = if hm[0][0] > 0.0 && det_h > 0.0 {
            [
                -(hm[1][1] * g[0] - sym * g[1]) / det_h,
                -(-sym * g[0] + hm[0][0] * g[1]) / det_h,
            ]
        } else {
            let scale = hm[0][0].abs().max(hm[1][1].abs()).max(1e-12);
            [-g[0] / scale, -g[1] / scale]
        };
        // backtrack until the energy does not increase; at the bottom the
        // energy is flat to rounding, so a shrinking gradient also counts
        let mut accepted = false;
        for _ in 0..60 {
            let (en, gn) = eval(ta + step[0], tb + step[1], &mut b);
            let flat = en <= e + 1e-12 * e.abs().max(1.0) && (gn[0] * gn[0] + gn[1] * gn[1]).sqrt() < gnorm;
            if en <= e + 1e-15 * e.abs().max(1.0) || flat {
                ta += step[0];
                tb += step[1];
                e = en;
                accepted = true;
                break;
            }
            step = [0.5 * step[0], 0.5 * step[1]];
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        let (_, g) = eval(ta, tb, &mut b);
        gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        converged = gnorm / free <= opts.gradient_tolerance;
    }
    if !converged {
        return Err(Error::OptimizerFailure {
            iterations: opts.max_iterations,
            reason: format!("sublattice gradient {gnorm:e} above tolerance"),
        });
    }
    let mut state = ProductState {
        bloch: state_of(ta, tb),
        time: 0.0,
    };
    if opts.mode == MinimizeMode::PerSite {
        align_sites(lattice, omega, &det, &is_pinned, &mut state, opts)?;
    }
    Ok(state)
}

/// Gauss–Seidel relaxation: the energy is linear in each `s_i`, so the
/// optimum given the others is `s_i = −B_i/|B_i|`.
fn align_sites(
    lattice: &Lattice,
    omega: f64,
    det: &[f64],
    pinned: &[bool],
    state: &mut ProductState,
    opts: &MinimizeOptions,
) -> Result<()> {
    let n = lattice.len();
    let field = |s: &[Bloch], i: usize| -> Bloch {
        let mut z = -det[i];
        for &(j, v) in lattice.couplings(i) {
            z += v * 0.5 * (1.0 + s[j][2]);
        }
        [omega, 0.0, z]
    };
    let mut worst = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        for i in 0..n {
            if pinned[i] {
                continue;
            }
            let b = field(&state.bloch, i);
            let nb = norm(&b);
            if nb > 0.0 {
                state.bloch[i] = [-b[0] / nb, -b[1] / nb, -b[2] / nb];
            }
        }
        // tangential gradient |B_i × s_i|/2
        worst = (0..n)
            .filter(|&i| !pinned[i])
            .map(|i| {
                let b = field(&state.bloch, i);
                let s = state.bloch[i];
                let c = [
                    b[1] * s[2] - b[2] * s[1],
                    b[2] * s[0] - b[0] * s[2],
                    b[0] * s[1] - b[1] * s[0],
                ];
                0.5 * norm(&c)
            })
            .fold(0.0, f64::max);
        if worst <= opts.gradient_tolerance {
            return Ok(());
        }
    }
    Err(Error::OptimizerFailure {
        iterations: opts.max_iterations,
        reason: format!("per-site gradient {worst:e} above tolerance"),
    })
}

struct Precession<'a> {
    lattice: &'a Lattice,
    seg: &'a Segment,
    weights: &'a [f64],
}

impl OdeSystem<f64> for Precession<'_> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.seg.sample(t);
        let n = self.lattice.len();
        for i in 0..n {
            let local = self.weights.get(i).map_or(0.0, |a| a * d.local);
            let mut bz = -(d.delta + local);
            for &(j, v) in self.lattice.couplings(i) {
                bz += v * 0.5 * (1.0 + y[3 * j + 2]);
            }
            let b = [d.omega, 0.0, bz];
            let s = &y[3 * i..3 * i + 3];
            dy[3 * i] = b[1] * s[2] - b[2] * s[1];
            dy[3 * i + 1] = b[2] * s[0] - b[0] * s[2];
            dy[3 * i + 2] = b[0] * s[1] - b[1] * s[0];
        }
    }

    fn project(&self, y: &mut [f64]) {
        for s in y.chunks_mut(3) {
            let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            s.iter_mut().for_each(|v| *v /= n);
        }
    }

    fn projects(&self) -> bool {
        true
    }
}

/// Integrate the precession equations from `t0` to `t1`.
pub fn meanfield_evolve(
    lattice: &Lattice,
    state: &mut ProductState,
    schedule: &DriveSchedule,
    t0: f64,
    t1: f64,
    tolerance: f64,
) -> Result<()> {
    check_len(lattice, state.len(), "state")?;
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let total = schedule.total_time();
    if !(t0 >= 0.0 && t1 >= t0 && t1 <= total * (1.0 + 1e-12) + 1e-15) {
        return Err(Error::invalid(format!(
            "evolution window [{t0}, {t1}] outside schedule [0, {total}]"
        )));
    }
    let weights = schedule.local_pattern();
    if !weights.is_empty() {
        check_len(lattice, weights.len(), "local pattern")?;
    }
    let mut y: Vec<f64> = state.bloch.iter().flatten().copied().collect();
    for seg in schedule.pieces(t0, t1) {
        let sys = Precession {
            lattice,
            seg: &seg,
            weights,
        };
        let mut ode = Dopri5::new(tolerance, tolerance);
        ode.integrate(&sys, seg.t_start, seg.t_end, &mut y)?;
    }
    for (b, c) in state.bloch.iter_mut().zip(y.chunks(3)) {
        *b = [c[0], c[1], c[2]];
    }
    state.time = t1;
    Ok(())
}

/// Independent Bernoulli readout with `p_i = (1 + s_z,i)/2`.
pub fn meanfield_sample(lattice: &Lattice, state: &ProductState, n_shots: usize, seed: u64) -> Result<SnapshotSet> {
    check_len(lattice, state.len(), "state")?;
    if n_shots == 0 {
        return Err(Error::invalid("n_shots must be at least 1"));
    }
    let p = state.occupations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (lattice.width(), lattice.height());
    let shots = (0..n_shots)
        .map(|_| {
            let cells = p.iter().map(|&pi| u8::from(rng.random::<f64>() < pi)).collect();
            Snapshot::new(w, h, cells)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = SnapshotMeta::new();
    meta.seed = Some(seed);
    meta.hold_time = Some(state.time);
    SnapshotSet::new(w, h, shots, meta)
}
