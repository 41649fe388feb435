//! Square-lattice geometry and the van der Waals coupling table.
//!
//! Frequencies throughout the crate are angular frequencies in rad/μs and
//! times are in μs, so `Ω/2π = 6 MHz` is stored as `2π·6`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convert a frequency quoted as `f/2π` in MHz into rad/μs.
pub fn mhz(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Interaction range, counted in coordination shells of the square lattice.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Nearest,
    NextNearest,
    #[default]
    ThirdNearest,
}

impl Cutoff {
    /// Largest squared distance (lattice units) kept by the cutoff.
    pub fn max_dist2(self) -> usize {
        match self {
            Cutoff::Nearest => 1,
            Cutoff::NextNearest => 2,
            Cutoff::ThirdNearest => 4,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub x: usize,
    pub y: usize,
}

impl Site {
    pub fn new(x: usize, y: usize) -> Self {
        Site { x, y }
    }

    /// Sublattice sign `(-1)^(x+y)`.
    pub fn parity(self) -> i8 {
        if (self.x + self.y).is_multiple_of(2) {
            1
        } else {
            -1
        }
    }
}

/// One entry of the coupling table.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    /// Squared pair distance in lattice units.
    pub dist2: usize,
    pub strength: f64,
}

/// Rectangular array of `width × height` sites with row-major linear index
/// `x + width·y`.
#[derive(Clone, Debug)]
pub struct Lattice {
    width: usize,
    height: usize,
    spacing_a: f64,
    v_nn: f64,
    boundary: Boundary,
    cutoff: Cutoff,
    pairs: Vec<Coupling>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Lattice {
    pub fn new(
        width: usize,
        height: usize,
        spacing_a: f64,
        v_nn: f64,
        boundary: Boundary,
        cutoff: Cutoff,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "lattice dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(spacing_a > 0.0) || !spacing_a.is_finite() {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing_a}")));
        }
        if !(v_nn > 0.0) || !v_nn.is_finite() {
            return Err(Error::invalid(format!(
                "nearest-neighbour interaction must be positive, got {v_nn}"
            )));
        }
        let n = width * height;
        let max_d2 = cutoff.max_dist2();
        let mut pairs = Vec::new();
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = Self::offset(width, height, boundary, i, j);
                let d2 = dx * dx + dy * dy;
                if d2 == 0 || d2 > max_d2 {
                    continue;
                }
                let strength = v_nn / (d2 as f64).powi(3);
                pairs.push(Coupling {
                    i,
                    j,
                    dist2: d2,
                    strength,
                });
                rows[i].push((j, strength));
                rows[j].push((i, strength));
            }
        }
        Ok(Lattice {
            width,
            height,
            spacing_a,
            v_nn,
            boundary,
            cutoff,
            pairs,
            rows,
        })
    }

    fn offset(width: usize, height: usize, boundary: Boundary, i: usize, j: usize) -> (usize, usize) {
        let (xi, yi) = (i % width, i / width);
        let (xj, yj) = (j % width, j / width);
        let mut dx = xi.abs_diff(xj);
        let mut dy = yi.abs_diff(yj);
        if boundary == Boundary::Periodic {
            dx = dx.min(width - dx);
            dy = dy.min(height - dy);
        }
        (dx, dy)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        self.spacing_a
    }

    pub fn v_nn(&self) -> f64 {
        self.v_nn
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn site(&self, index: usize) -> Site {
        Site::new(index % self.width, index / self.width)
    }

    pub fn index(&self, site: Site) -> Result<usize> {
        self.check(site)?;
        Ok(site.x + self.width * site.y)
    }

    pub fn check(&self, site: Site) -> Result<()> {
        if site.x >= self.width || site.y >= self.height {
            return Err(Error::invalid(format!(
                "site ({}, {}) outside {}x{} lattice",
                site.x, site.y, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn parity(&self, index: usize) -> i8 {
        self.site(index).parity()
    }

    /// All coupled pairs `i < j`.
    pub fn pairs(&self) -> &[Coupling] {
        &self.pairs
    }

    /// Couplings of site `i` as `(j, V_ij)`.
    pub fn couplings(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `V_ij`, zero beyond the cutoff and on the diagonal.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, v)| v)
    }

    /// Pair distance in units of the spacing (minimum image when periodic).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (dx, dy) = Self::offset(self.width, self.height, self.boundary, i, j);
        ((dx * dx + dy * dy) as f64).sqrt()
    }

    /// Indices of the nearest neighbours (distance exactly one spacing).
    pub fn nearest_neighbors(&self, i: usize) -> Vec<usize> {
        let s = self.site(i);
        let mut out = Vec::with_capacity(4);
        let (w, h) = (self.width as isize, self.height as isize);
        for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
            let mut x = s.x as isize + dx;
            let mut y = s.y as isize + dy;
            if self.boundary == Boundary::Periodic {
                x = x.rem_euclid(w);
                y = y.rem_euclid(h);
            } else if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let j = x as usize + self.width * y as usize;
            if j != i && !out.contains(&j) {
                out.push(j);
            }
        }
        out
    }
}

/// `R_b / a = (V_nn / Ω)^{1/6}`.
pub fn blockade_radius(v_nn: f64, omega: f64) -> Result<f64> {
    if !(v_nn > 0.0) || !(omega > 0.0) {
        return Err(Error::invalid("blockade radius needs positive V_nn and Ω"));
    }
    Ok((v_nn / omega).powf(1.0 / 6.0))
}

/// Open-boundary Manhattan distance between two sites of `lattice`.
pub fn manhattan_distance(lattice: &Lattice, a: Site, b: Site) -> Result<usize> {
    lattice.check(a)?;
    lattice.check(b)?;
    Ok(a.x.abs_diff(b.x) + a.y.abs_diff(b.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(w: usize, h: usize, b: Boundary) -> Lattice {
        Lattice::new(w, h, 1.0, 1.0, b, Cutoff::ThirdNearest).unwrap()
    }

    #[test]
    fn next_nearest_coupling_matches_sixth_power() {
        let v_nn = mhz(11.69);
        let l = Lattice::new(3, 3, 6.45, v_nn, Boundary::Open, Cutoff::ThirdNearest).unwrap();
        let v = l.coupling(0, 4);
        assert!((v / mhz(1.0) - 11.69 / 8.0).abs() < 1e-12);
        assert!((v / mhz(1.0) - 1.46).abs() < 0.01);
    }

    #[test]
    fn no_self_coupling() {
        let l = lat(3, 3, Boundary::Periodic);
        for i in 0..l.len() {
            assert_eq!(l.coupling(i, i), 0.0);
            assert!(l.couplings(i).iter().all(|&(j, _)| j != i));
        }
    }

    #[test]
    fn periodic_four_by_four_has_four_neighbours_everywhere() {
        let l = lat(4, 4, Boundary::Periodic);
        for i in 0..16 {
            let nn = l.nearest_neighbors(i);
            assert_eq!(nn.len(), 4);
            assert!(nn.iter().all(|&j| (l.distance(i, j) - 1.0).abs() < 1e-15));
            let nn_coupled = l.couplings(i).iter().filter(|&&(_, v)| v == 1.0).count();
            assert_eq!(nn_coupled, 4);
        }
    }

    #[test]
    fn third_nearest_cutoff_drops_longer_pairs() {
        let l = lat(5, 5, Boundary::Open);
        for p in l.pairs() {
            assert!(l.distance(p.i, p.j) <= 2.0 + 1e-12);
        }
        // (0,0)-(2,1) is at √5 > 2
        assert_eq!(l.coupling(0, 7), 0.0);
        assert!(l.coupling(0, 2) > 0.0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Lattice::new(0, 3, 1.0, 1.0, Boundary::Open, Cutoff::Nearest).is_err());
        assert!(Lattice::new(3, 3, 0.0, 1.0, Boundary::Open, Cutoff::Nearest).is_err());
        assert!(Lattice::new(3, 3, 1.0, -1.0, Boundary::Open, Cutoff::Nearest).is_err());
    }

    #[test]
    fn blockade_radius_examples() {
        assert!((blockade_radius(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let r = blockade_radius(mhz(11.69), mhz(6.0)).unwrap();
        assert!((r - 1.118).abs() < 1e-3);
        assert!((blockade_radius(1.0, 64.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(blockade_radius(1.0, 0.0).is_err());
    }

    #[test]
    fn manhattan_examples() {
        let l = lat(16, 16, Boundary::Open);
        let d = |a: (usize, usize), b: (usize, usize)| {
            manhattan_distance(&l, Site::new(a.0, a.1), Site::new(b.0, b.1)).unwrap()
        };
        assert_eq!(d((0, 0), (0, 0)), 0);
        assert_eq!(d((0, 0), (2, 3)), 5);
        assert_eq!(d((8, 8), (0, 0)), 16);
        assert!(manhattan_distance(&l, Site::new(16, 0), Site::new(0, 0)).is_err());
    }

    #[test]
    fn periodic_row_sums_are_translation_invariant() {
        let l = lat(4, 4, Boundary::Periodic);
        let sums: Vec<f64> = (0..16)
            .map(|i| l.couplings(i).iter().map(|&(_, v)| v).sum())
            .collect();
        assert!(sums.iter().all(|&s| s == sums[0]));
    }
}
