//! Damped least squares (Levenberg–Marquardt) with a finite-difference
//! Jacobian. Accepted steps never increase the residual.

use nalgebra::{DMatrix, DVector};

#[derive(Copy, Clone, Debug)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative change of the squared residual that counts as converged.
    pub tolerance: f64,
    pub gradient_tolerance: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            max_iterations: 1000,
            tolerance: 1e-10,
            gradient_tolerance: 1e-14,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsqResult {
    pub params: Vec<f64>,
    /// `s²(JᵀJ)⁻¹` with `s² = ‖r‖²/(m − n)`; pseudo-inverse when singular.
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Residual norm after every accepted step, starting with the initial guess.
    pub history: Vec<f64>,
}

fn eval(f: &impl Fn(&[f64], &mut [f64]), p: &[f64], r: &mut DVector<f64>) -> f64 {
    f(p, r.as_mut_slice());
    let c = r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn jacobian(f: &impl Fn(&[f64], &mut [f64]), p: &[f64], m: usize) -> DMatrix<f64> {
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut q = p.to_vec();
    let mut plus = DVector::zeros(m);
    let mut minus = DVector::zeros(m);
    for k in 0..n {
        let h = 1e-6 * p[k].abs().max(1e-3);
        q[k] = p[k] + h;
        f(&q, plus.as_mut_slice());
        q[k] = p[k] - h;
        f(&q, minus.as_mut_slice());
        q[k] = p[k];
        jac.set_column(k, &((&plus - &minus) / (2.0 * h)));
    }
    jac
}

/// Minimise `‖r(p)‖²` where `residual(p, r)` fills `r` (length `m`).
pub fn levenberg_marquardt(
    residual: impl Fn(&[f64], &mut [f64]),
    m: usize,
    initial: &[f64],
    opts: &LsqOptions,
) -> LsqResult {
    let n = initial.len();
    let mut p = initial.to_vec();
    let mut r = DVector::zeros(m);
    let mut cost = eval(&residual, &p, &mut r);
    let mut history = vec![cost.sqrt()];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = DVector::zeros(m);

    if cost.is_finite() {
        while iterations < opts.max_iterations {
            iterations += 1;
            if cost == 0.0 {
                converged = true;
                break;
            }
            let jac = jacobian(&residual, &p, m);
            let jtj = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            if g.amax() <= opts.gradient_tolerance * cost.sqrt().max(1e-300) {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let mut a = jtj.clone();
                for k in 0..n {
                    a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                    lambda *= 10.0;
                    continue;
                };
                let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let c = eval(&residual, &q, &mut trial);
                if c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    p = q;
                    std::mem::swap(&mut r, &mut trial);
                    cost = c;
                    history.push(cost.sqrt());
                    lambda = (lambda / 3.0).max(1e-15);
                    accepted = true;
                    let small_step = step.amax() <= 1e-14 * p.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
                    if rel < opts.tolerance || small_step {
                        converged = true;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                // no descent direction left at machine precision
                converged = lambda > 1e10;
                break;
            }
            if converged {
                break;
            }
        }
    }

    let jac = jacobian(&residual, &p, m);
    let jtj = jac.transpose() * &jac;
    let dof = m.saturating_sub(n).max(1) as f64;
    let s2 = cost / dof;
    let inv = jtj
        .clone()
        .try_inverse()
        .filter(|i| i.iter().all(|v| v.is_finite()))
        .or_else(|| jtj.pseudo_inverse(1e-12).ok())
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let mut cov = inv * s2;
    // enforce exact symmetry
    cov = (&cov + cov.transpose()) * 0.5;
    LsqResult {
        params: p,
        covariance: cov,
        residual_norm: cost.sqrt(),
        converged: converged && cost.is_finite(),
        iterations,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay() {
        let t: Vec<f64> = (0..30).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&t| 2.5 * (-1.3 * t).exp()).collect();
        let res = levenberg_marquardt(
            |p, r| {
                for ((ri, &ti), &yi) in r.iter_mut().zip(&t).zip(&y) {
                    *ri = p[0] * (-p[1] * ti).exp() - yi;
                }
            },
            t.len(),
            &[1.0, 0.5],
            &LsqOptions::default(),
        );
        assert!(res.converged);
        assert!((res.params[0] - 2.5).abs() < 1e-8);
        assert!((res.params[1] - 1.3).abs() < 1e-8);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn linear_fit_covariance_matches_closed_form() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.1, 1.2, 1.9, 3.2, 3.9];
        let res = levenberg_marquardt(
            |p, r| {
                for k in 0..5 {
                    r[k] = p[0] + p[1] * x[k] - y[k];
                }
            },
            5,
            &[0.0, 0.0],
            &LsqOptions::default(),
        );
        let n = 5.0;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let s2 = res.residual_norm.powi(2) / 3.0;
        let det = n * sxx - sx * sx;
        assert!((res.covariance[(1, 1)] - s2 * n / det).abs() < 1e-8);
        assert!((res.covariance[(0, 0)] - s2 * sxx / det).abs() < 1e-8);
        assert_eq!(res.covariance[(0, 1)], res.covariance[(1, 0)]);
    }
}
