//! Krylov-subspace kernels: the short-time propagator `exp(-iτH)ψ` and a
//! block Rayleigh–Ritz eigensolver for the low end of a real symmetric
//! spectrum. Both work matrix-free through a `y = H x` closure.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub(crate) fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn rdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rnorm(a: &[f64]) -> f64 {
    rdot(a, a).sqrt()
}

#[derive(Copy, Clone, Debug)]
pub struct ExpmOptions {
    /// Absolute error budget for the whole `τ` interval.
    pub tolerance: f64,
    pub max_dim: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        ExpmOptions {
            tolerance: 1e-10,
            max_dim: 30,
        }
    }
}

/// Replace `psi` by `exp(-iτH)ψ` for real symmetric `H`, substepping until the
/// Lanczos a-posteriori error estimate fits the budget. Returns the number of
/// operator applications.
pub fn expm_apply<F>(apply: F, psi: &mut [Complex64], tau: f64, opts: ExpmOptions) -> Result<usize>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let dim = psi.len();
    let max_m = opts.max_dim.min(dim).max(1);
    let mut matvecs = 0usize;
    let mut done = 0.0f64;
    let total = tau.abs();
    let sign = tau.signum();
    let zero = Complex64::new(0.0, 0.0);
    // basis vectors are allocated once and reused across substeps
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut w = vec![zero; dim];
    let mut guard = 0usize;

    while done < total {
        guard += 1;
        if guard > 100_000 {
            return Err(Error::IntegrationFailure {
                t: done,
                step: total - done,
                accepted: guard,
                rejected: 0,
                reason: "Krylov propagator made no progress".into(),
            });
        }
        let beta0 = cnorm(psi);
        if beta0 == 0.0 {
            return Ok(matvecs);
        }
        if basis.is_empty() {
            basis.push(vec![zero; dim]);
        }
        for (b, x) in basis[0].iter_mut().zip(psi.iter()) {
            *b = x / beta0;
        }
        let remaining = total - done;
        let mut alpha = Vec::with_capacity(max_m);
        let mut beta = Vec::with_capacity(max_m);
        let mut breakdown = false;
        let mut converged = false;
        for j in 0..max_m {
            apply(&basis[j], &mut w);
            matvecs += 1;
            let a = cdot(&basis[j], &w).re;
            alpha.push(a);
            // full reorthogonalisation keeps the small basis clean
            for v in basis.iter().take(j + 1) {
                let c = cdot(v, &w);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= c * vi;
                }
            }
            let b = cnorm(&w);
            beta.push(b);
            if b <= 1e-13 * (a.abs() + 1.0) {
                breakdown = true;
                break;
            }
            if basis.len() < j + 2 {
                basis.push(vec![zero; dim]);
            }
            for (v, x) in basis[j + 1].iter_mut().zip(&w) {
                *v = x / b;
            }
            // stop growing once the whole remainder fits the budget
            let m = j + 1;
            if m >= 4 && m % 2 == 0 && m < max_m {
                let c = tridiag_exp(&alpha, &beta[..m - 1], sign * remaining);
                if beta0 * b * c[m - 1].norm() <= opts.tolerance * remaining / total {
                    converged = true;
                    break;
                }
            }
        }
        let m = alpha.len();
        let mut step = remaining;
        let mut c = tridiag_exp(&alpha, &beta[..m - 1], sign * step);
        if !breakdown && !converged {
            let beta_m = beta[m - 1];
            loop {
                let err = beta0 * beta_m * c[m - 1].norm();
                let budget = opts.tolerance * step / total;
                if err <= budget || step <= total * 1e-12 {
                    break;
                }
                step *= 0.5;
                c = tridiag_exp(&alpha, &beta[..m - 1], sign * step);
            }
        }
        for x in psi.iter_mut() {
            *x = zero;
        }
        for (k, v) in basis.iter().take(m).enumerate() {
            let ck = c[k] * beta0;
            for (p, vi) in psi.iter_mut().zip(v) {
                *p += ck * vi;
            }
        }
        done += step;
        if breakdown {
            // invariant subspace: the result is exact for the whole remainder
            done = total;
        }
    }
    Ok(matvecs)
}

/// First column of `exp(-iτT)` for the symmetric tridiagonal `T` with
/// diagonal `alpha` and off-diagonal `beta`.
fn tridiag_exp(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    (0..m)
        .map(|r| {
            (0..m)
                .map(|k| Complex64::from_polar(q[(r, k)] * q[(0, k)], -lam[k] * tau))
                .sum()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub n_states: usize,
    /// Residual threshold `‖Hx − θx‖`.
    pub tolerance: f64,
    pub max_basis: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Lowest `n_states` eigenpairs of a real symmetric operator via block
/// Rayleigh–Ritz on a Krylov-type subspace grown from Ritz residuals, with
/// thick restarts.
pub fn lowest_eigenpairs<F>(apply: F, dim: usize, opts: &EigenOptions) -> Result<Eigenpairs>
where
    F: Fn(&[f64], &mut [f64]),
{
    let nev = opts.n_states.min(dim);
    if nev == 0 {
        return Err(Error::invalid("n_states must be positive"));
    }
    let max_basis = opts.max_basis.min(dim).max((2 * nev).min(dim));
    let keep = (nev + 4).min(max_basis / 2).max(nev);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<Vec<f64>> = Vec::new();
    let mut hv: Vec<Vec<f64>> = Vec::new();
    let mut p: Vec<Vec<f64>> = Vec::new();

    let push = |x: Vec<f64>, v: &mut Vec<Vec<f64>>, hv: &mut Vec<Vec<f64>>, p: &mut Vec<Vec<f64>>| -> bool {
        let mut x = x;
        for _ in 0..2 {
            for b in v.iter() {
                let c = rdot(b, &x);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= c * bi;
                }
            }
        }
        let nrm = rnorm(&x);
        if nrm < 1e-10 {
            return false;
        }
        for xi in &mut x {
            *xi /= nrm;
        }
        let mut y = vec![0.0; x.len()];
        apply(&x, &mut y);
        let row: Vec<f64> = v.iter().map(|b| rdot(b, &y)).collect();
        let diag = rdot(&x, &y);
        for (k, r) in p.iter_mut().enumerate() {
            r.push(row[k]);
        }
        let mut new_row = row;
        new_row.push(diag);
        p.push(new_row);
        v.push(x);
        hv.push(y);
        true
    };

    for _ in 0..nev {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        push(x, &mut v, &mut hv, &mut p);
    }

    let mut last_res = f64::INFINITY;
    for iter in 0..opts.max_iterations {
        let m = v.len();
        let pm = DMatrix::from_fn(m, m, |i, j| 0.5 * (p[i][j] + p[j][i]));
        let eig = SymmetricEigen::new(pm);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let ritz = |k: usize, src: &[Vec<f64>]| -> Vec<f64> {
            let col = order[k];
            let mut out = vec![0.0; dim];
            for (j, b) in src.iter().enumerate() {
                let c = eig.eigenvectors[(j, col)];
                for (o, bi) in out.iter_mut().zip(b) {
                    *o += c * bi;
                }
            }
            out
        };
        let nk = nev.min(m);
        let mut xs = Vec::with_capacity(nk);
        let mut rs = Vec::with_capacity(nk);
        let mut res = Vec::with_capacity(nk);
        for k in 0..nk {
            let x = ritz(k, &v);
            let hx = ritz(k, &hv);
            let th = eig.eigenvalues[order[k]];
            let r: Vec<f64> = hx.iter().zip(&x).map(|(a, b)| a - th * b).collect();
            res.push(rnorm(&r));
            xs.push(x);
            rs.push(r);
        }
        last_res = res.iter().cloned().fold(0.0, f64::max);
        if nk == nev && last_res <= opts.tolerance {
            return Ok(Eigenpairs {
                values: (0..nev).map(|k| eig.eigenvalues[order[k]]).collect(),
                vectors: xs,
                residuals: res,
                iterations: iter,
            });
        }
        let unconverged: Vec<usize> = (0..nk).filter(|&k| res[k] > opts.tolerance).collect();
        if m + unconverged.len() > max_basis {
            let kk = keep.min(m);
            let new_v: Vec<Vec<f64>> = (0..kk).map(|k| ritz(k, &v)).collect();
            let new_hv: Vec<Vec<f64>> = (0..kk).map(|k| ritz(k, &hv)).collect();
            let mut new_p = vec![vec![0.0; kk]; kk];
            for (k, row) in new_p.iter_mut().enumerate() {
                row[k] = eig.eigenvalues[order[k]];
            }
            v = new_v;
            hv = new_hv;
            p = new_p;
        }
        let mut grew = false;
        for &k in &unconverged {
            grew |= push(rs[k].clone(), &mut v, &mut hv, &mut p);
        }
        if !grew {
            // residual directions already spanned; inject a random direction
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            if !push(x, &mut v, &mut hv, &mut p) && v.len() >= dim {
                break;
            }
        }
    }
    Err(Error::EigensolverFailure {
        iterations: opts.max_iterations,
        residual: last_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(x: &[f64], y: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut s = 2.0 * x[i];
            if i > 0 {
                s -= x[i - 1];
            }
            if i + 1 < n {
                s -= x[i + 1];
            }
            y[i] = s;
        }
    }

    #[test]
    fn path_laplacian_spectrum() {
        let n = 200;
        let opts = EigenOptions {
            n_states: 3,
            tolerance: 1e-9,
            max_basis: 60,
            max_iterations: 5000,
            seed: 1,
        };
        let e = lowest_eigenpairs(laplacian, n, &opts).unwrap();
        for k in 0..3 {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos();
            assert!((e.values[k] - exact).abs() < 1e-9, "{k}: {} vs {exact}", e.values[k]);
        }
    }

    #[test]
    fn degenerate_pair_is_resolved() {
        // diag(1, 1, 2, 3, ...) has a doubly degenerate ground level
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[i] = (i.max(1)) as f64 * x[i];
            }
        };
        let opts = EigenOptions {
            n_states: 3,
            tolerance: 1e-10,
            max_basis: 20,
            max_iterations: 500,
            seed: 3,
        };
        let e = lowest_eigenpairs(apply, n, &opts).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-10);
        assert!((e.values[1] - 1.0).abs() < 1e-10);
        assert!((e.values[2] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn expm_matches_two_level_rotation() {
        // H = σx, exp(-iτσx)|0⟩ = cos τ |0⟩ − i sin τ |1⟩
        let apply = |x: &[Complex64], y: &mut [Complex64]| {
            y[0] = x[1];
            y[1] = x[0];
        };
        let mut psi = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        expm_apply(apply, &mut psi, 2.3, ExpmOptions::default()).unwrap();
        assert!((psi[0] - Complex64::new(2.3f64.cos(), 0.0)).norm() < 1e-12);
        assert!((psi[1] - Complex64::new(0.0, -(2.3f64.sin()))).norm() < 1e-12);
    }
}
