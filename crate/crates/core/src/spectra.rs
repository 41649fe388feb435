//! Connected correlations of the staggered spin, structure factors,
//! correlation-length fits, scaling collapse and time-series fits.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::analysis::staggered_map;
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LsqOptions, LsqResult};
use crate::lattice::Site;
use crate::schedule::Order;
use crate::snapshot::{Snapshot, SnapshotMeta, SnapshotSet};

/// Displacement-averaged connected correlator on the full `(2W−1)×(2H−1)` grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    counts: Vec<usize>,
}

impl CorrelationMap {
    pub fn grid_width(&self) -> usize {
        2 * self.width - 1
    }

    pub fn grid_height(&self) -> usize {
        2 * self.height - 1
    }

    fn slot(&self, dx: isize, dy: isize) -> usize {
        let gx = (dx + self.width as isize - 1) as usize;
        let gy = (dy + self.height as isize - 1) as usize;
        gx + self.grid_width() * gy
    }

    pub fn get(&self, dx: isize, dy: isize) -> f64 {
        self.values[self.slot(dx, dy)]
    }

    pub fn count(&self, dx: isize, dy: isize) -> usize {
        self.counts[self.slot(dx, dy)]
    }

    /// Build directly from a function of displacement (for synthetic input).
    pub fn from_fn(width: usize, height: usize, g: impl Fn(isize, isize) -> f64) -> Self {
        let (gw, gh) = (2 * width - 1, 2 * height - 1);
        let mut values = vec![0.0; gw * gh];
        let mut counts = vec![0; gw * gh];
        for gy in 0..gh {
            for gx in 0..gw {
                let dx = gx as isize - (width as isize - 1);
                let dy = gy as isize - (height as isize - 1);
                values[gx + gw * gy] = g(dx, dy);
                counts[gx + gw * gy] = (width - dx.unsigned_abs()) * (height - dy.unsigned_abs());
            }
        }
        CorrelationMap {
            width,
            height,
            values,
            counts,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `G(r) = ⟨Z̃_i Z̃_j⟩ − ⟨Z̃_i⟩⟨Z̃_j⟩` averaged over all ordered pairs with `j − i = r`.
pub fn connected_correlation(set: &SnapshotSet) -> Result<CorrelationMap> {
    if set.len() < 2 {
        return Err(Error::invalid("connected correlation needs at least two shots"));
    }
    let (w, h) = (set.width(), set.height());
    let n = w * h;
    let shots = set.len();
    let z = DMatrix::from_fn(shots, n, |s, i| f64::from(staggered_map(&set.shots()[s])[i]));
    let second = z.transpose() * &z / shots as f64;
    let mean: Vec<f64> = (0..n).map(|i| z.column(i).sum() / shots as f64).collect();
    let mut out = CorrelationMap::from_fn(w, h, |_, _| 0.0);
    for j in 0..n {
        let (xj, yj) = ((j % w) as isize, (j / w) as isize);
        for i in 0..n {
            let (xi, yi) = ((i % w) as isize, (i / w) as isize);
            let slot = out.slot(xj - xi, yj - yi);
            out.values[slot] += second[(i, j)] - mean[i] * mean[j];
        }
    }
    for (v, &c) in out.values.iter_mut().zip(&out.counts) {
        *v /= c as f64;
    }
    Ok(out)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct RadialPoint {
    pub k: f64,
    pub s: f64,
    pub modes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureFactor {
    pub width: usize,
    pub height: usize,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    /// `S(kx, ky)` row-major over `kx`.
    pub s2d: Vec<f64>,
    pub radial: Vec<RadialPoint>,
    /// `G(0)`, kept for the sum rule and resolution checks.
    pub g0: f64,
}

impl StructureFactor {
    /// `Σ_k S(k) / N_k`, equal to `G(0)` by Parseval.
    pub fn mode_average(&self) -> f64 {
        self.s2d.iter().sum::<f64>() / self.s2d.len() as f64
    }

    pub fn k_max(&self) -> f64 {
        self.radial.iter().map(|p| p.k).fold(0.0, f64::max)
    }
}

fn k_axis(len: usize) -> Vec<f64> {
    let n = 2 * len - 1;
    (0..n)
        .map(|m| 2.0 * PI * (m as f64 - (len as f64 - 1.0)) / n as f64)
        .collect()
}

/// Cosine transform of `G` on the displacement grid, plus the radial average
/// in bins of width `2π/max(W, H)` (k = 0 kept as its own point).
pub fn structure_factor(corr: &CorrelationMap) -> StructureFactor {
    let (w, h) = (corr.width, corr.height);
    let (gw, gh) = (corr.grid_width(), corr.grid_height());
    let kx = k_axis(w);
    let ky = k_axis(h);
    let disp_x: Vec<f64> = (0..gw).map(|g| g as f64 - (w as f64 - 1.0)).collect();
    let disp_y: Vec<f64> = (0..gh).map(|g| g as f64 - (h as f64 - 1.0)).collect();
    // separable: S(kx,ky) = Σ_dy Σ_dx G cos(kx dx + ky dy)
    // = Σ_dy [cos(ky dy) Σ_dx G cos(kx dx) − sin(ky dy) Σ_dx G sin(kx dx)]
    let mut cx = vec![0.0; gw * gh];
    let mut sx = vec![0.0; gw * gh];
    for gy in 0..gh {
        for (a, &k) in kx.iter().enumerate() {
            let (mut c, mut s) = (0.0, 0.0);
            for (gx, &d) in disp_x.iter().enumerate() {
                let g = corr.values[gx + gw * gy];
                c += g * (k * d).cos();
                s += g * (k * d).sin();
            }
            cx[a + gw * gy] = c;
            sx[a + gw * gy] = s;
        }
    }
    let mut s2d = vec![0.0; gw * gh];
    for (b, &q) in ky.iter().enumerate() {
        for a in 0..gw {
            let mut v = 0.0;
            for (gy, &d) in disp_y.iter().enumerate() {
                v += (q * d).cos() * cx[a + gw * gy] - (q * d).sin() * sx[a + gw * gy];
            }
            s2d[a + gw * b] = v;
        }
    }
    let dk = 2.0 * PI / w.max(h) as f64;
    let mut bins: Vec<(f64, f64, usize)> = Vec::new();
    for (b, &q) in ky.iter().enumerate() {
        for (a, &k) in kx.iter().enumerate() {
            let mag = k.hypot(q);
            let idx = if mag < 1e-12 { 0 } else { (mag / dk - 1e-9).ceil() as usize };
            if bins.len() <= idx {
                bins.resize(idx + 1, (0.0, 0.0, 0));
            }
            bins[idx].0 += mag;
            bins[idx].1 += s2d[a + gw * b];
            bins[idx].2 += 1;
        }
    }
    let radial = bins
        .into_iter()
        .filter(|b| b.2 > 0)
        .map(|(k, s, n)| RadialPoint {
            k: k / n as f64,
            s: s / n as f64,
            modes: n,
        })
        .collect();
    StructureFactor {
        width: w,
        height: h,
        kx,
        ky,
        s2d,
        radial,
        g0: corr.get(0, 0),
    }
}

/// Least-squares estimate with named parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub converged: bool,
    pub n_points: usize,
    pub flags: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|k| self.values[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|k| self.covariance[k][k].max(0.0).sqrt())
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    fn failed(names: &[&str], n_points: usize, flag: &str) -> Self {
        let n = names.len();
        FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            values: vec![f64::NAN; n],
            covariance: vec![vec![f64::NAN; n]; n],
            residual_norm: f64::NAN,
            converged: false,
            n_points,
            flags: vec![flag.to_string()],
        }
    }
}

pub const FLAG_BELOW_RESOLUTION: &str = "below-resolution";
pub const FLAG_AT_CEILING: &str = "at-resolution-ceiling";
pub const FLAG_NO_PEAK: &str = "no-spectral-peak";
pub const FLAG_NO_OSCILLATION: &str = "no-oscillation";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum LineShape {
    /// `S0/(1+ξ²k²)^{3/2}`.
    #[default]
    ThreeHalves,
    /// Ornstein–Zernike `S0/(1+ξ²k²)`.
    OrnsteinZernike,
}

impl LineShape {
    fn exponent(self) -> f64 {
        match self {
            LineShape::ThreeHalves => 1.5,
            LineShape::OrnsteinZernike => 1.0,
        }
    }

    pub fn eval(self, s0: f64, xi: f64, k: f64) -> f64 {
        s0 / (1.0 + xi * xi * k * k).powf(self.exponent())
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CorrelationFitOptions {
    pub shape: LineShape,
    /// Radial points above this `|k|` are left out of the fit; the continuum
    /// line shape degrades near the zone boundary.
    pub k_fit_max: f64,
}

impl Default for CorrelationFitOptions {
    fn default() -> Self {
        CorrelationFitOptions {
            shape: LineShape::ThreeHalves,
            k_fit_max: FRAC_PI_2,
        }
    }
}

/// Fit `S(k)` radially with residuals weighted by `√(modes per bin)`;
/// returns parameters `xi`, `s0`, `b = π S0/ξ²`.
pub fn fit_correlation_length(sf: &StructureFactor, opts: &CorrelationFitOptions) -> FitResult {
    // small lattices: widen the window to the four lowest bins
    let mut points = sf.radial.clone();
    points.sort_by(|a, b| a.k.total_cmp(&b.k));
    let inside = points.iter().filter(|p| p.k <= opts.k_fit_max).count();
    points.truncate(inside.max(4));
    let ceiling = sf.width.max(sf.height) as f64;
    fit_radial_with(&points, ceiling, sf.g0, opts.shape, sf.k_max())
}

/// Fit bare radial points (no window applied).
pub fn fit_radial(points: &[RadialPoint], ceiling: f64, g0: f64, shape: LineShape) -> FitResult {
    let k_max = points.iter().map(|p| p.k).fold(0.0, f64::max);
    fit_radial_with(points, ceiling, g0, shape, k_max)
}

fn fit_radial_with(points: &[RadialPoint], ceiling: f64, g0: f64, shape: LineShape, k_max: f64) -> FitResult {
    let names = ["xi", "s0", "b"];
    let n = points.len();
    if n < 4 {
        return FitResult::failed(&names, n, "too-few-points");
    }
    let scale = points.iter().map(|p| p.s.abs()).fold(0.0, f64::max);
    if g0 <= 0.0 || scale == 0.0 {
        let mut f = FitResult::failed(&names, n, FLAG_AT_CEILING);
        f.values = vec![ceiling, 0.0, 0.0];
        f.flags.push("no-fluctuations".into());
        return f;
    }
    let k_min_point = points
        .iter()
        .min_by(|a, b| a.k.total_cmp(&b.k))
        .expect("non-empty");
    let s0_guess = k_min_point.s.max(scale * 1e-3);
    let half = s0_guess / 2f64.powf(shape.exponent());
    let mut sorted: Vec<&RadialPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.k.total_cmp(&b.k));
    let xi_guess = sorted
        .windows(2)
        .find(|w| w[0].s >= half && w[1].s < half)
        .map(|w| {
            let f = (w[0].s - half) / (w[0].s - w[1].s);
            1.0 / (w[0].k + f * (w[1].k - w[0].k))
        })
        .filter(|x| x.is_finite() && *x > 0.0)
        .unwrap_or(1.0);

    let run = |xi0: f64| {
        levenberg_marquardt(
            |p, r| {
                let xi = p[0].exp();
                for (ri, pt) in r.iter_mut().zip(points) {
                    let w = (pt.modes.max(1) as f64).sqrt();
                    *ri = w * (shape.eval(p[1], xi, pt.k) - pt.s) / scale;
                }
            },
            n,
            &[xi0.ln(), s0_guess],
            &LsqOptions::default(),
        )
    };
    let best = [xi_guess, 0.5 * xi_guess, 2.0 * xi_guess]
        .into_iter()
        .map(run)
        .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm))
        .expect("three starts");
    let xi = best.params[0].exp();
    let s0 = best.params[1];
    let b = PI * s0 / (xi * xi);
    // propagate: ξ = e^u, b = π S0 e^{−2u}
    let j = DMatrix::from_row_slice(3, 2, &[xi, 0.0, 0.0, 1.0, -2.0 * b, PI / (xi * xi)]);
    let cov = &j * (&best.covariance * (scale * scale)) * j.transpose();
    let mut flags = Vec::new();
    if xi < 1.0 / k_max {
        flags.push(FLAG_BELOW_RESOLUTION.to_string());
    }
    if xi >= ceiling {
        flags.push(FLAG_AT_CEILING.to_string());
    }
    FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: vec![xi, s0, b],
        covariance: (0..3).map(|r| (0..3).map(|c| cov[(r, c)]).collect()).collect(),
        residual_norm: best.residual_norm * scale,
        converged: best.converged,
        n_points: n,
        flags,
    }
}

#[derive(Clone, Debug)]
pub struct CollapseSlice {
    pub t: f64,
    pub radial: Vec<RadialPoint>,
    pub xi: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Collapse {
    /// `(t, kξ, S/(bξ²))`.
    pub points: Vec<(f64, f64, f64)>,
    /// Mean over common `kξ` bins of the variance between slices.
    pub spread: f64,
}

/// Rescale every slice by its `ξ` and `b` (or by `ξ` only when
/// `rescale_b` is false) and measure how well the curves coincide.
pub fn scaling_collapse(slices: &[CollapseSlice], n_bins: usize, rescale_b: bool) -> Result<Collapse> {
    if slices.len() < 3 {
        return Err(Error::invalid("scaling collapse needs at least three slices"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("scaling collapse needs at least one bin"));
    }
    let points: Vec<(f64, f64, f64)> = slices
        .iter()
        .flat_map(|s| {
            let norm = if rescale_b { s.b * s.xi * s.xi } else { s.xi * s.xi };
            s.radial.iter().map(move |p| (s.t, p.k * s.xi, p.s / norm))
        })
        .collect();
    let xmax = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let width = xmax / n_bins as f64 * (1.0 + 1e-12);
    let mut per_bin: Vec<Vec<(f64, usize)>> = vec![vec![(0.0, 0); slices.len()]; n_bins + 1];
    let mut offset = 0;
    for (si, s) in slices.iter().enumerate() {
        for p in &points[offset..offset + s.radial.len()] {
            let b = if width > 0.0 { (p.1 / width) as usize } else { 0 };
            let cell = &mut per_bin[b.min(n_bins)][si];
            cell.0 += p.2;
            cell.1 += 1;
        }
        offset += s.radial.len();
    }
    let mut acc = 0.0;
    let mut used = 0;
    for bin in per_bin {
        let means: Vec<f64> = bin.iter().filter(|c| c.1 > 0).map(|c| c.0 / c.1 as f64).collect();
        if means.len() < 2 {
            continue;
        }
        let m = means.iter().sum::<f64>() / means.len() as f64;
        acc += means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64;
        used += 1;
    }
    Ok(Collapse {
        points,
        spread: if used > 0 { acc / used as f64 } else { f64::NAN },
    })
}

/// Periodogram peak `(ω, complex amplitude)` of mean-subtracted samples over
/// `ω ∈ (0, ω_nyquist]`, refined on a fine grid.
fn spectral_peak(t: &[f64], y: &[f64]) -> (f64, Complex64, f64) {
    let n = t.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let span = t[t.len() - 1] - t[0];
    let dt = span / (n - 1.0);
    let w_lo = PI / span;
    let w_hi = PI / dt;
    let transform = |w: f64| -> Complex64 {
        t.iter()
            .zip(y)
            .map(|(&ti, &yi)| (yi - mean) * Complex64::from_polar(1.0, -w * (ti - t[0])))
            .sum()
    };
    let grid = 16 * t.len();
    let powers: Vec<(f64, f64)> = (0..=grid)
        .map(|k| {
            let w = w_lo + (w_hi - w_lo) * k as f64 / grid as f64;
            (w, transform(w).norm_sqr())
        })
        .collect();
    let (mut w_best, _) = powers
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    // golden-section refine within one grid cell
    let step = (w_hi - w_lo) / grid as f64;
    let (mut a, mut b) = (w_best - step, w_best + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if transform(c).norm_sqr() > transform(d).norm_sqr() {
            b = d;
        } else {
            a = c;
        }
    }
    w_best = 0.5 * (a + b);
    let mut sorted: Vec<f64> = powers.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    (w_best, transform(w_best), median)
}

fn wrap_phase(p: f64) -> f64 {
    let mut p = p % (2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

fn to_fit(names: &[&str], res: &LsqResult, n: usize, flags: Vec<String>) -> FitResult {
    let k = names.len();
    FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: res.params.clone(),
        covariance: (0..k).map(|r| (0..k).map(|c| res.covariance[(r, c)]).collect()).collect(),
        residual_norm: res.residual_norm,
        converged: res.converged,
        n_points: n,
        flags,
    }
}

/// Keep samples with `t ≥ t[0] + start_offset`.
fn window<'a>(t: &'a [f64], y: &'a [f64], start_offset: f64) -> (&'a [f64], &'a [f64]) {
    let t0 = t.first().copied().unwrap_or(0.0) + start_offset;
    let s = t.partition_point(|&v| v < t0);
    (&t[s..], &y[s..])
}

fn check_series(t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::invalid("time and value series differ in length"));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sample times must be strictly increasing"));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    Ok(())
}

/// `φ0 + A cos(ωt + θ0) e^{−γt}` with time measured from the first kept sample.
/// Parameters: `phi0`, `amplitude`, `omega`, `gamma`, `theta0`.
pub fn fit_damped_oscillator(t: &[f64], y: &[f64], start_offset: f64) -> Result<FitResult> {
    check_series(t, y)?;
    let names = ["phi0", "amplitude", "omega", "gamma", "theta0"];
    let (t, y) = window(t, y, start_offset);
    if t.len() < 8 {
        return Err(Error::invalid("damped-oscillator fit needs at least 8 samples"));
    }
    let n = t.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = mean.abs().max(spread).max(1e-300);
    if spread <= 1e-12 * scale {
        let mut f = FitResult::failed(&names, n, FLAG_NO_PEAK);
        f.values = vec![mean, 0.0, f64::NAN, f64::NAN, f64::NAN];
        return Ok(f);
    }
    let (w0, amp, median) = spectral_peak(t, y);
    let span = t[n - 1] - t[0];
    let mut flags = Vec::new();
    if w0 * span < 2.0 * PI {
        flags.push("less-than-one-period".to_string());
    }
    if amp.norm_sqr() < 4.0 * median {
        flags.push(FLAG_NO_PEAK.to_string());
    }
    let tau: Vec<f64> = t.iter().map(|v| v - t[0]).collect();
    let model = |p: &[f64], s: f64| p[0] + p[1] * (p[2] * s + p[4]).cos() * (-p[3] * s).exp();
    let a0 = 2.0 * amp.norm() / n as f64;
    let th0 = amp.arg();
    let mut best: Option<LsqResult> = None;
    for &g0 in &[0.0, 1.0 / span, 3.0 / span] {
        for &wf in &[1.0, 0.98, 1.02] {
            let a_start = a0 * (1.0 + g0 * span / 2.0);
            let res = levenberg_marquardt(
                |p, r| {
                    for ((ri, &s), &v) in r.iter_mut().zip(&tau).zip(y) {
                        *ri = (model(p, s) - v) / scale;
                    }
                },
                n,
                &[mean, a_start, w0 * wf, g0, th0],
                &LsqOptions::default(),
            );
            if best.as_ref().is_none_or(|b| res.residual_norm < b.residual_norm) {
                best = Some(res);
            }
        }
    }
    let mut res = best.expect("at least one start");
    res.residual_norm *= scale;
    res.covariance *= scale * scale;
    if res.params[1] < 0.0 {
        res.params[1] = -res.params[1];
        res.params[4] += PI;
    }
    if res.params[2] < 0.0 {
        res.params[2] = -res.params[2];
        res.params[4] = -res.params[4];
    }
    res.params[4] = wrap_phase(res.params[4]);
    let converged = res.converged && !flags.iter().any(|f| f == FLAG_NO_PEAK);
    let mut fit = to_fit(&names, &res, n, flags);
    fit.converged = converged;
    Ok(fit)
}

/// `(c0 + c1 t)^α + c cos(ωt + φ)`.
/// Parameters: `c0`, `c1`, `alpha`, `c`, `omega`, `phi`.
pub fn fit_powerlaw_plus_oscillation(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_series(t, y)?;
    let names = ["c0", "c1", "alpha", "c", "omega", "phi"];
    let n = t.len();
    if n < 10 {
        return Err(Error::invalid("power-law fit needs at least 10 samples"));
    }
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let power = |p: &[f64], s: f64| (p[0] + p[1] * s).powf(p[2]);
    // y² linear in t seeds α = 1/2
    let (sx, sy, sxx, sxy) = t.iter().zip(y).fold((0.0, 0.0, 0.0, 0.0), |acc, (&x, &v)| {
        let q = v * v;
        (acc.0 + x, acc.1 + q, acc.2 + x * x, acc.3 + x * q)
    });
    let nf = n as f64;
    let c1 = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    let c0 = (sy - c1 * sx) / nf;
    let pre = levenberg_marquardt(
        |p, r| {
            for ((ri, &s), &v) in r.iter_mut().zip(t).zip(y) {
                *ri = (power(p, s) - v) / scale;
            }
        },
        n,
        &[c0.max(1e-6), c1, 0.5],
        &LsqOptions::default(),
    );
    let resid: Vec<f64> = t.iter().zip(y).map(|(&s, &v)| v - power(&pre.params, s)).collect();
    let rmax = resid.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut flags = Vec::new();
    let (w0, c_amp, phase) = if rmax <= 1e-9 * scale {
        flags.push(FLAG_NO_OSCILLATION.to_string());
        (PI / (t[n - 1] - t[0]), 0.0, 0.0)
    } else {
        let (w, a, _) = spectral_peak(t, &resid);
        let a = a * Complex64::from_polar(1.0, w * t[0]);
        (w, 2.0 * a.norm() / nf, a.arg())
    };
    let full = |start: [f64; 6]| {
        levenberg_marquardt(
            |p, r| {
                for ((ri, &s), &v) in r.iter_mut().zip(t).zip(y) {
                    *ri = (power(p, s) + p[3] * (p[4] * s + p[5]).cos() - v) / scale;
                }
            },
            n,
            &start,
            &LsqOptions::default(),
        )
    };
    let p = &pre.params;
    let mut res = [1.0, 0.97, 1.03]
        .into_iter()
        .map(|f| full([p[0], p[1], p[2], c_amp, w0 * f, phase]))
        .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm))
        .expect("three starts");
    res.residual_norm *= scale;
    res.covariance *= scale * scale;
    if res.params[3] < 0.0 {
        res.params[3] = -res.params[3];
        res.params[5] += PI;
    }
    if res.params[4] < 0.0 {
        res.params[4] = -res.params[4];
        res.params[5] = -res.params[5];
    }
    res.params[5] = wrap_phase(res.params[5]);
    Ok(to_fit(&names, &res, n, flags))
}

/// Snapshots whose staggered spins have `⟨Z̃_i Z̃_j⟩ = e^{−|r_ij|/ξ}`: sign of a
/// Gaussian field with covariance `sin(π/2 · e^{−r/ξ})`.
pub fn planted_correlation_snapshots(
    width: usize,
    height: usize,
    xi: f64,
    n_shots: usize,
    seed: u64,
) -> Result<SnapshotSet> {
    if !(xi > 0.0) {
        return Err(Error::invalid("planted correlation length must be positive"));
    }
    let n = width * height;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let dx = (i % width) as f64 - (j % width) as f64;
        let dy = (i / width) as f64 - (j / width) as f64;
        (FRAC_PI_2 * (-dx.hypot(dy) / xi).exp()).sin()
    });
    let mut jitter = 0.0;
    let chol = loop {
        let mut c = cov.clone();
        for k in 0..n {
            c[(k, k)] += jitter;
        }
        if let Some(l) = c.cholesky() {
            break l.l();
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > 1e-6 {
            return Err(Error::invalid("planted covariance is not positive definite"));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = nalgebra::DVector::zeros(n);
    let shots = (0..n_shots)
        .map(|_| {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let g = &chol * &z;
            Snapshot::from_fn(width, height, |x, y| {
                let up = g[x + width * y] >= 0.0;
                up == Order::Af1.is_rydberg(Site::new(x, y))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = SnapshotMeta::new();
    meta.seed = Some(seed);
    meta.protocol = Some(format!("planted-exponential xi={xi}"));
    SnapshotSet::new(width, height, shots, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_of(shots: Vec<Snapshot>) -> SnapshotSet {
        let (w, h) = (shots[0].width(), shots[0].height());
        SnapshotSet::new(w, h, shots, SnapshotMeta::new()).unwrap()
    }

    fn af(w: usize, h: usize, o: Order) -> Snapshot {
        Snapshot::from_fn(w, h, |x, y| o.is_rydberg(Site::new(x, y))).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let alt = set_of(vec![af(4, 3, Order::Af1), af(4, 3, Order::Af2)]);
        let g = connected_correlation(&alt).unwrap();
        for dy in -2..=2 {
            for dx in -3..=3 {
                assert!((g.get(dx, dy) - 1.0).abs() < 1e-14);
            }
        }
        let same = set_of(vec![af(4, 3, Order::Af1); 3]);
        assert!(connected_correlation(&same).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(connected_correlation(&set_of(vec![af(2, 2, Order::Af1)])).is_err());
        assert_eq!(g.count(0, 0), 12);
        assert_eq!(g.count(3, -2), 1);
    }

    #[test]
    fn structure_factor_limits() {
        let delta = CorrelationMap::from_fn(5, 4, |dx, dy| f64::from(u8::from(dx == 0 && dy == 0)));
        let s = structure_factor(&delta);
        assert!(s.s2d.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let ones = CorrelationMap::from_fn(5, 4, |_, _| 1.0);
        let s = structure_factor(&ones);
        let total: f64 = s.s2d.len() as f64;
        assert!((s.radial[0].s - total).abs() < 1e-9);
        assert_eq!(s.radial[0].k, 0.0);
        let nonzero_k = s.s2d.iter().filter(|v| v.abs() > 1e-9).count();
        assert_eq!(nonzero_k, 1);
    }

    #[test]
    fn parseval_and_symmetry() {
        let g = CorrelationMap::from_fn(6, 5, |dx, dy| (-((dx * dx + dy * dy) as f64).sqrt() / 1.7).exp());
        let s = structure_factor(&g);
        assert!((s.mode_average() - g.get(0, 0)).abs() < 1e-12);
        let gw = 11;
        for b in 0..9 {
            for a in 0..gw {
                let m = (gw - 1 - a) + gw * (8 - b);
                assert!((s.s2d[a + gw * b] - s.s2d[m]).abs() < 1e-10);
            }
        }
        let modes: usize = s.radial.iter().map(|p| p.modes).sum();
        assert_eq!(modes, 11 * 9);
    }

    #[test]
    fn exact_model_recovery_and_scale_consistency() {
        let pts: Vec<RadialPoint> = (0..12)
            .map(|k| {
                let k = 0.1 + 0.25 * k as f64;
                RadialPoint {
                    k,
                    s: LineShape::ThreeHalves.eval(5.0, 2.0, k),
                    modes: 1,
                }
            })
            .collect();
        let f = fit_radial(&pts, 16.0, 1.0, LineShape::ThreeHalves);
        assert!(f.converged);
        assert!((f.get("xi").unwrap() - 2.0).abs() < 1e-6 * 2.0);
        assert!((f.get("s0").unwrap() - 5.0).abs() < 1e-6 * 5.0);
        assert!((f.get("b").unwrap() - PI * 5.0 / 4.0).abs() < 1e-6);
        let scaled: Vec<RadialPoint> = pts.iter().map(|p| RadialPoint { s: 3.0 * p.s, ..*p }).collect();
        let g = fit_radial(&scaled, 16.0, 1.0, LineShape::ThreeHalves);
        assert!((g.get("xi").unwrap() - f.get("xi").unwrap()).abs() < 1e-9);
        assert!((g.get("s0").unwrap() / f.get("s0").unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn flat_spectrum_is_below_resolution() {
        let delta = CorrelationMap::from_fn(8, 8, |dx, dy| f64::from(u8::from(dx == 0 && dy == 0)));
        let f = fit_correlation_length(&structure_factor(&delta), &CorrelationFitOptions::default());
        assert!(f.has_flag(FLAG_BELOW_RESOLUTION));
    }

    #[test]
    fn damped_oscillator_self_consistency() {
        let t: Vec<f64> = (0..80).map(|k| k as f64 * 0.025).collect();
        let w = 2.0 * PI * 1.5;
        let y: Vec<f64> = t.iter().map(|&s| 0.3 + 0.4 * (w * s + 0.7).cos() * (-0.5 * s).exp()).collect();
        let f = fit_damped_oscillator(&t, &y, 0.0).unwrap();
        assert!(f.converged, "{f:?}");
        for (name, v) in [("phi0", 0.3), ("amplitude", 0.4), ("omega", w), ("gamma", 0.5), ("theta0", 0.7)] {
            assert!((f.get(name).unwrap() - v).abs() < 1e-6 * v.abs().max(1.0), "{name}");
        }
        let c = fit_damped_oscillator(&t, &vec![0.2; 80], 0.0).unwrap();
        assert!(!c.converged && c.has_flag(FLAG_NO_PEAK));
        assert!(fit_damped_oscillator(&t[..5], &y[..5], 0.0).is_err());
    }

    #[test]
    fn powerlaw_fits() {
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let pure: Vec<f64> = t.iter().map(|&s| (1.0 + 2.0 * s).sqrt()).collect();
        let f = fit_powerlaw_plus_oscillation(&t, &pure).unwrap();
        assert!((f.get("alpha").unwrap() - 0.5).abs() < 1e-4);
        assert!(f.get("c").unwrap().abs() < 1e-6);
        let osc: Vec<f64> = t.iter().map(|&s| (1.0 + 2.0 * s).sqrt() + 0.1 * (4.0 * s + 0.3).cos()).collect();
        let f = fit_powerlaw_plus_oscillation(&t, &osc).unwrap();
        for (name, v) in [("c0", 1.0), ("c1", 2.0), ("alpha", 0.5), ("c", 0.1), ("omega", 4.0), ("phi", 0.3)] {
            assert!((f.get(name).unwrap() - v).abs() < 0.05 * v, "{name}: {:?}", f.get(name));
        }
    }

    #[test]
    fn collapse_of_model_family() {
        let x: Vec<f64> = (1..20).map(|k| 0.2 * k as f64).collect();
        let slice = |t: f64, xi: f64, b: f64| CollapseSlice {
            t,
            xi,
            b,
            radial: x
                .iter()
                .map(|&x| RadialPoint {
                    k: x / xi,
                    s: LineShape::ThreeHalves.eval(b * xi * xi / PI, xi, x / xi),
                    modes: 1,
                })
                .collect(),
        };
        let same_b = [slice(0.0, 1.0, 2.0), slice(1.0, 2.0, 2.0), slice(2.0, 3.0, 2.0)];
        assert!(scaling_collapse(&same_b, 10, true).unwrap().spread <= 1e-10);
        let varying = [slice(0.0, 1.0, 1.0), slice(1.0, 2.0, 1.5), slice(2.0, 3.0, 2.0)];
        let raw = scaling_collapse(&varying, 10, false).unwrap().spread;
        let fixed = scaling_collapse(&varying, 10, true).unwrap().spread;
        assert!(fixed * 10.0 <= raw);
    }

    #[test]
    fn planted_field_statistics() {
        let set = planted_correlation_snapshots(6, 6, 2.0, 4000, 3).unwrap();
        let g = connected_correlation(&set).unwrap();
        assert!((g.get(0, 0) - 1.0).abs() < 0.02);
        assert!((g.get(1, 0) - (-0.5f64).exp()).abs() < 0.05);
        assert!((g.get(2, 0) - (-1.0f64).exp()).abs() < 0.05);
    }
}
