//! Single-shot analysis: staggered maps, spin-flip correction, domains,
//! the boundary kernel, classical-energy budgets, post-selection, bootstrap
//! errors and local-domain geometry.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::schedule::Order;
use crate::snapshot::{Snapshot, SnapshotSet};

pub const DEFAULT_MAX_CHAIN: usize = 4;
pub const DEFAULT_MAX_DEFECTS: u32 = 4;
pub const DEFAULT_RESAMPLES: usize = 1000;

fn parity(x: usize, y: usize) -> i8 {
    if (x + y).is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// `m̃ = (−1)^{x+y}(2n − 1)`, row-major.
pub fn staggered_map(shot: &Snapshot) -> Vec<i8> {
    let w = shot.width();
    shot.cells()
        .iter()
        .enumerate()
        .map(|(i, &n)| parity(i % w, i / w) * (2 * n as i8 - 1))
        .collect()
}

fn neighbours8(w: usize, h: usize, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(|dy| (-1isize..=1).map(move |dx| (dx, dy)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
        })
}

/// Flip every atom whose staggered sign differs from all of its existing
/// nearest and next-nearest neighbours. One simultaneous pass over the input.
///
/// Idempotent whenever both dimensions are at least 2.
pub fn spin_flip_correct(shot: &Snapshot) -> Snapshot {
    let (w, h) = (shot.width(), shot.height());
    let m = staggered_map(shot);
    let mut out = shot.clone();
    for y in 0..h {
        for x in 0..w {
            let me = m[x + w * y];
            let mut any = false;
            let mut isolated = true;
            for (nx, ny) in neighbours8(w, h, x, y) {
                any = true;
                if m[nx + w * ny] == me {
                    isolated = false;
                    break;
                }
            }
            if any && isolated {
                out.set(x, y, shot.get(x, y) == 0);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DomainLabeling {
    pub width: usize,
    pub height: usize,
    /// Domain id per site, starting at 1.
    pub labels: Vec<u32>,
    /// Order of domain `k` at index `k − 1`.
    pub orders: Vec<Order>,
    pub areas: Vec<usize>,
}

impl DomainLabeling {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    /// Areas in descending order.
    pub fn sorted_areas(&self) -> Vec<usize> {
        let mut a = self.areas.clone();
        a.sort_unstable_by(|x, y| y.cmp(x));
        a
    }
}

/// Connected regions of equal staggered sign under 4-connectivity.
pub fn label_domains(shot: &Snapshot) -> DomainLabeling {
    let (w, h) = (shot.width(), shot.height());
    let m = staggered_map(shot);
    let mut labels = vec![0u32; w * h];
    let mut orders = Vec::new();
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32 + 1;
        let sign = m[start];
        labels[start] = id;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if labels[j] == 0 && m[j] == sign {
                    labels[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        orders.push(if sign > 0 { Order::Af1 } else { Order::Af2 });
        areas.push(area);
    }
    DomainLabeling {
        width: w,
        height: h,
        labels,
        orders,
        areas,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainStatistics {
    /// Area-weighted probability that an atom belongs to a domain of each area.
    pub distribution: BTreeMap<usize, f64>,
    pub mean_largest: f64,
    pub mean_second_largest: f64,
}

pub fn domain_statistics(labelings: &[DomainLabeling]) -> Result<DomainStatistics> {
    if labelings.is_empty() {
        return Err(Error::invalid("domain statistics need at least one shot"));
    }
    let mut weight: BTreeMap<usize, u64> = BTreeMap::new();
    let mut total = 0u64;
    let (mut largest, mut second) = (0.0, 0.0);
    for l in labelings {
        for &a in &l.areas {
            *weight.entry(a).or_default() += a as u64;
            total += a as u64;
        }
        let s = l.sorted_areas();
        largest += s.first().copied().unwrap_or(0) as f64;
        second += s.get(1).copied().unwrap_or(0) as f64;
    }
    let n = labelings.len() as f64;
    Ok(DomainStatistics {
        distribution: weight
            .into_iter()
            .map(|(a, c)| (a, c as f64 / total as f64))
            .collect(),
        mean_largest: largest / n,
        mean_second_largest: second / n,
    })
}

/// Spin-flip correct then label every shot.
pub fn label_set(set: &SnapshotSet) -> Vec<DomainLabeling> {
    set.shots()
        .iter()
        .map(|s| label_domains(&spin_flip_correct(s)))
        .collect()
}

/// Sum of the four nearest-neighbour occupations, zero-padded.
pub fn coarse_grain(shot: &Snapshot) -> Vec<u8> {
    let (w, h) = (shot.width(), shot.height());
    let mut c = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0;
            if x > 0 {
                s += shot.get(x - 1, y);
            }
            if x + 1 < w {
                s += shot.get(x + 1, y);
            }
            if y > 0 {
                s += shot.get(x, y - 1);
            }
            if y + 1 < h {
                s += shot.get(x, y + 1);
            }
            c[x + w * y] = s;
        }
    }
    c
}

/// Boundary atoms: Rydberg with any Rydberg neighbour, or ground without
/// four Rydberg neighbours.
pub fn classify_boundary(shot: &Snapshot) -> Vec<bool> {
    coarse_grain(shot)
        .iter()
        .zip(shot.cells())
        .map(|(&c, &n)| if n == 1 { c != 0 } else { c != 4 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyBudget {
    /// Shot-averaged diagonal energy (angular frequency).
    pub total: f64,
    pub bulk: f64,
    pub wall: f64,
    /// `(total, bulk, wall)` per shot.
    pub per_shot: Vec<(f64, f64, f64)>,
}

/// Diagonal energy of one raw shot with the outer layer excluded, split into
/// bulk and wall parts. Pair terms are shared equally between endpoints.
pub fn shot_energy(shot: &Snapshot, delta: f64, v_nn: f64, v_nnn: f64) -> Result<(f64, f64, f64)> {
    let (w, h) = (shot.width(), shot.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!(
            "{w}x{h} snapshot has no interior after excluding the edge layer"
        )));
    }
    let wall = classify_boundary(shot);
    let mut site_e = vec![0.0; w * h];
    let interior = |x: usize, y: usize| x >= 1 && y >= 1 && x + 1 < w && y + 1 < h;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = x + w * y;
            let n = shot.get(x, y) as f64;
            site_e[i] += -delta * (n - 1.0);
            if shot.get(x, y) == 0 {
                continue;
            }
            let pairs = [(1isize, 0isize, v_nn), (0, 1, v_nn), (1, 1, v_nnn), (1, -1, v_nnn)];
            for (dx, dy, v) in pairs {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if nx >= w || ny >= h || !interior(nx, ny) || shot.get(nx, ny) == 0 {
                    continue;
                }
                site_e[i] += 0.5 * v;
                site_e[nx + w * ny] += 0.5 * v;
            }
        }
    }
    let (mut bulk, mut wall_e) = (0.0, 0.0);
    for (e, &b) in site_e.iter().zip(&wall) {
        if b {
            wall_e += e;
        } else {
            bulk += e;
        }
    }
    Ok((bulk + wall_e, bulk, wall_e))
}

pub fn classical_energy(set: &SnapshotSet, delta: f64, v_nn: f64, v_nnn: f64) -> Result<EnergyBudget> {
    if set.is_empty() {
        return Err(Error::invalid("classical energy needs at least one shot"));
    }
    let per_shot = set
        .shots()
        .iter()
        .map(|s| shot_energy(s, delta, v_nn, v_nnn))
        .collect::<Result<Vec<_>>>()?;
    let n = per_shot.len() as f64;
    let bulk = per_shot.iter().map(|p| p.1).sum::<f64>() / n;
    let wall = per_shot.iter().map(|p| p.2).sum::<f64>() / n;
    Ok(EnergyBudget {
        total: bulk + wall,
        bulk,
        wall,
        per_shot,
    })
}

/// Longest horizontal or vertical run of Rydberg atoms.
pub fn longest_chain(shot: &Snapshot) -> usize {
    let (w, h) = (shot.width(), shot.height());
    let mut best = 0;
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run = if shot.get(x, y) == 1 { run + 1 } else { 0 };
            best = best.max(run);
        }
    }
    for x in 0..w {
        let mut run = 0;
        for y in 0..h {
            run = if shot.get(x, y) == 1 { run + 1 } else { 0 };
            best = best.max(run);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostSelection {
    pub set: SnapshotSet,
    pub retained_fraction: f64,
}

/// Drop shots with a Rydberg chain longer than `max_chain` or more than
/// `max_defects` recorded defects.
pub fn postselect(set: &SnapshotSet, max_chain: usize, max_defects: u32) -> PostSelection {
    let keep: Vec<bool> = set
        .shots()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let defects = set.meta.defects.as_ref().map_or(0, |d| d[k]);
            longest_chain(s) <= max_chain && defects <= max_defects
        })
        .collect();
    let kept = keep.iter().filter(|&&k| k).count();
    PostSelection {
        set: set.select(&keep),
        retained_fraction: if set.is_empty() { 0.0 } else { kept as f64 / set.len() as f64 },
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Bootstrap over `n` items: `statistic` receives the resampled indices.
pub fn bootstrap_indices(
    n: usize,
    n_resamples: usize,
    seed: u64,
    mut statistic: impl FnMut(&[usize]) -> f64,
) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::invalid("bootstrap needs a non-empty sample"));
    }
    if n_resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least two resamples"));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = statistic(&all);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for v in idx.iter_mut() {
                *v = rng.random_range(0..n);
            }
            statistic(&idx)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (stats.len() - 1) as f64;
    Ok(Estimate {
        estimate,
        std_error: var.sqrt(),
    })
}

/// Bootstrap standard error of `statistic` over per-shot values.
pub fn bootstrap(
    values: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    n_resamples: usize,
    seed: u64,
) -> Result<Estimate> {
    let mut buf = Vec::with_capacity(values.len());
    bootstrap_indices(values.len(), n_resamples, seed, |idx| {
        buf.clear();
        buf.extend(idx.iter().map(|&i| values[i]));
        statistic(&buf)
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialProfile {
    /// Mean staggered magnetisation at Manhattan distance `d` (index).
    pub values: Vec<f64>,
    /// Number of sites contributing at each distance; zero entries are NaN.
    pub counts: Vec<usize>,
}

/// Average a per-site map over sites at each Manhattan distance from `center`,
/// optionally keeping only one parity class (`+1` even, `−1` odd).
pub fn radial_profile_from_map(
    width: usize,
    height: usize,
    map: &[f64],
    center: Site,
    sublattice: Option<i8>,
) -> Result<RadialProfile> {
    if center.x >= width || center.y >= height {
        return Err(Error::invalid(format!(
            "center ({}, {}) outside {width}x{height}",
            center.x, center.y
        )));
    }
    if map.len() != width * height {
        return Err(Error::invalid("map size does not match dimensions"));
    }
    let dmax = center.x.max(width - 1 - center.x) + center.y.max(height - 1 - center.y);
    let mut sum = vec![0.0; dmax + 1];
    let mut counts = vec![0usize; dmax + 1];
    for y in 0..height {
        for x in 0..width {
            if let Some(p) = sublattice {
                if parity(x, y) != p {
                    continue;
                }
            }
            let d = x.abs_diff(center.x) + y.abs_diff(center.y);
            sum[d] += map[x + width * y];
            counts[d] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(RadialProfile { values, counts })
}

/// Shot-averaged staggered magnetisation per site.
pub fn mean_staggered_map(set: &SnapshotSet) -> Vec<f64> {
    let mut acc = vec![0.0; set.width() * set.height()];
    for s in set.shots() {
        for (a, m) in acc.iter_mut().zip(staggered_map(s)) {
            *a += m as f64;
        }
    }
    let n = set.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

pub fn radial_profile(set: &SnapshotSet, center: Site, sublattice: Option<i8>) -> Result<RadialProfile> {
    radial_profile_from_map(set.width(), set.height(), &mean_staggered_map(set), center, sublattice)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct RadiusResult {
    /// Interpolated first outward zero crossing.
    pub radius: Option<f64>,
    /// Number of sign changes seen; more than one is flagged downstream.
    pub crossings: usize,
}

/// Positions where a sampled curve changes sign, linearly interpolated.
fn zero_crossings(values: &[f64]) -> Vec<f64> {
    let pts: Vec<(usize, f64)> = values
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .collect();
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let ((i0, a), (i1, b)) = (w[0], w[1]);
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            // counts only if the curve actually continues to the other side
            let next = pts.iter().find(|&&(i, v)| i > i1 && v != 0.0);
            if next.is_some_and(|&(_, v)| v.signum() != a.signum()) {
                out.push(i1 as f64);
            }
        } else if a.signum() != b.signum() {
            out.push(i0 as f64 + (i1 - i0) as f64 * a / (a - b));
        }
    }
    out
}

pub fn domain_radius(profile: &[f64]) -> RadiusResult {
    let c = zero_crossings(profile);
    RadiusResult {
        radius: c.first().copied(),
        crossings: c.len(),
    }
}

/// Zero crossing of the shot-averaged staggered magnetisation along each
/// requested row.
pub fn wall_positions(set: &SnapshotSet, rows: &[usize]) -> Result<Vec<Option<f64>>> {
    let m = mean_staggered_map(set);
    rows_crossings(set.width(), set.height(), &m, rows)
}

fn rows_crossings(w: usize, h: usize, m: &[f64], rows: &[usize]) -> Result<Vec<Option<f64>>> {
    rows.iter()
        .map(|&y| {
            if y >= h {
                return Err(Error::invalid(format!("row {y} outside height {h}")));
            }
            Ok(zero_crossings(&m[w * y..w * (y + 1)]).first().copied())
        })
        .collect()
}

/// Wall positions with bootstrap errors from resampling shots.
pub fn wall_positions_with_errors(
    set: &SnapshotSet,
    rows: &[usize],
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<Option<Estimate>>> {
    let w = set.width();
    let maps: Vec<Vec<i8>> = set.shots().iter().map(staggered_map).collect();
    let centre = wall_positions(set, rows)?;
    rows.iter()
        .zip(centre)
        .map(|(&y, c)| {
            let Some(_) = c else { return Ok(None) };
            let est = bootstrap_indices(maps.len(), n_resamples, seed, |idx| {
                let mut row = vec![0.0; w];
                for &k in idx {
                    for (x, r) in row.iter_mut().enumerate() {
                        *r += maps[k][x + w * y] as f64;
                    }
                }
                zero_crossings(&row).first().copied().unwrap_or(f64::NAN)
            })?;
            Ok(Some(est))
        })
        .collect()
}
