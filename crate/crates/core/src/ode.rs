//! Adaptive Dormand–Prince 5(4) integrator over real or complex state vectors.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Element type of an integrable state vector.
pub trait OdeScalar:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn abs(self) -> f64;
}

impl OdeScalar for f64 {
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl OdeScalar for Complex64 {
    fn abs(self) -> f64 {
        self.norm()
    }
}

pub trait OdeSystem<T: OdeScalar> {
    fn rhs(&self, t: f64, y: &[T], dy: &mut [T]);

    /// Applied to the state after every accepted step (e.g. renormalisation).
    fn project(&self, _y: &mut [T]) {}

    /// Whether `project` can move the state.
    fn projects(&self) -> bool {
        false
    }
}

impl<T: OdeScalar, F: Fn(f64, &[T], &mut [T])> OdeSystem<T> for F {
    fn rhs(&self, t: f64, y: &[T], dy: &mut [T]) {
        self(t, y, dy)
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    pub stats: Stats,
    h: Option<f64>,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Dopri5 {
            rtol,
            atol,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
            stats: Stats::default(),
            h: None,
        }
    }

    pub fn with_max_step(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// Integrate `y` from `t0` to `t1` in place.
    pub fn integrate<T: OdeScalar, S: OdeSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        t0: f64,
        t1: f64,
        y: &mut [T],
    ) -> Result<()> {
        if t1 == t0 {
            return Ok(());
        }
        if !(self.rtol > 0.0 || self.atol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        let dir = (t1 - t0).signum();
        let n = y.len();
        let zero = T::default();
        let mut k: [Vec<T>; 7] = std::array::from_fn(|_| vec![zero; n]);
        let mut tmp = vec![zero; n];
        let mut y_new = vec![zero; n];

        sys.rhs(t0, y, &mut k[0]);
        self.stats.evaluations += 1;
        let mut t = t0;
        let span = (t1 - t0).abs();
        let mut h = self.h.unwrap_or_else(|| self.initial_step(y, &k[0], span)).min(self.h_max);
        let mut steps = 0usize;
        let mut last_reject = false;

        while (t1 - t) * dir > 0.0 {
            steps += 1;
            if steps > self.max_steps {
                return Err(self.failure(t, h, "maximum step count exceeded"));
            }
            let remaining = (t1 - t).abs();
            let mut h_try = h.min(remaining);
            // avoid a sliver of a final step
            if remaining - h_try < 1e-10 * span {
                h_try = remaining;
            }
            let hs = h_try * dir;

            combo(&mut tmp, y, hs, &[(A21, &k[0])]);
            sys.rhs(t + C2 * hs, &tmp, &mut k[1]);
            combo(&mut tmp, y, hs, &[(A31, &k[0]), (A32, &k[1])]);
            sys.rhs(t + C3 * hs, &tmp, &mut k[2]);
            combo(&mut tmp, y, hs, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]);
            sys.rhs(t + C4 * hs, &tmp, &mut k[3]);
            combo(
                &mut tmp,
                y,
                hs,
                &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
            );
            sys.rhs(t + C5 * hs, &tmp, &mut k[4]);
            combo(
                &mut tmp,
                y,
                hs,
                &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])],
            );
            sys.rhs(t + hs, &tmp, &mut k[5]);
            combo(
                &mut y_new,
                y,
                hs,
                &[(B1, &k[0]), (B3, &k[2]), (B4, &k[3]), (B5, &k[4]), (B6, &k[5])],
            );
            sys.rhs(t + hs, &y_new, &mut k[6]);
            self.stats.evaluations += 6;

            let mut err_acc = 0.0;
            for i in 0..n {
                let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * hs;
                let scale = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                let r = e.abs() / scale;
                err_acc += r * r;
            }
            let err = (err_acc / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                return Err(self.failure(t, h_try, "non-finite error estimate"));
            }

            if err <= 1.0 {
                t = if h_try == remaining { t1 } else { t + hs };
                y.copy_from_slice(&y_new);
                if sys.projects() {
                    sys.project(y);
                    sys.rhs(t, y, &mut k[0]);
                    self.stats.evaluations += 1;
                } else {
                    k.swap(0, 6);
                }
                self.stats.accepted += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                let fac = if last_reject { fac.min(1.0) } else { fac };
                // keep the user-facing step unless the final sliver forced it smaller
                if h_try == h || fac < 1.0 {
                    h = (h_try * fac).min(self.h_max);
                }
                last_reject = false;
            } else {
                self.stats.rejected += 1;
                h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                last_reject = true;
                if h < self.h_min {
                    return Err(self.failure(t, h, "step size underflow"));
                }
            }
        }
        self.h = Some(h);
        Ok(())
    }

    /// Integrate and call `observe(t, y)` at each requested time (ascending).
    pub fn integrate_observed<T: OdeScalar, S: OdeSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        t0: f64,
        times: &[f64],
        y: &mut [T],
        mut observe: impl FnMut(f64, &[T]),
    ) -> Result<()> {
        let mut t = t0;
        for &tt in times {
            self.integrate(sys, t, tt, y)?;
            observe(tt, y);
            t = tt;
        }
        Ok(())
    }

    fn initial_step<T: OdeScalar>(&self, y: &[T], f0: &[T], span: f64) -> f64 {
        let n = y.len().max(1) as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for (yi, fi) in y.iter().zip(f0) {
            let sc = self.atol + self.rtol * yi.abs();
            d0 += (yi.abs() / sc).powi(2);
            d1 += (fi.abs() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span).max(self.h_min * 10.0)
    }

    fn failure(&self, t: f64, step: f64, reason: &str) -> Error {
        Error::IntegrationFailure {
            t,
            step,
            accepted: self.stats.accepted,
            rejected: self.stats.rejected,
            reason: reason.to_string(),
        }
    }
}

fn combo<T: OdeScalar>(out: &mut [T], y: &[T], h: f64, terms: &[(f64, &Vec<T>)]) {
    for i in 0..out.len() {
        let mut acc = T::default();
        for (c, k) in terms {
            acc = acc + k[i] * *c;
        }
        out[i] = y[i] + acc * h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let sys = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let mut y = [1.0];
        let mut ode = Dopri5::new(1e-12, 1e-14);
        ode.integrate(&sys, 0.0, 2.0, &mut y).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_backwards_and_forwards() {
        let sys = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let mut y = [1.0, 0.0];
        let mut ode = Dopri5::new(1e-12, 1e-14);
        ode.integrate(&sys, 0.0, 10.0, &mut y).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        ode.integrate(&sys, 10.0, 0.0, &mut y).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn complex_rotation() {
        let sys = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| dy[0] = Complex64::new(0.0, -2.0) * y[0];
        let mut y = [Complex64::new(1.0, 0.0)];
        let mut ode = Dopri5::new(1e-12, 1e-14);
        ode.integrate(&sys, 0.0, 3.0, &mut y).unwrap();
        let exact = Complex64::from_polar(1.0, -6.0);
        assert!((y[0] - exact).norm() < 1e-10);
    }

    #[test]
    fn underflow_is_reported() {
        // blows up at t = 1
        let sys = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let mut y = [1.0];
        let mut ode = Dopri5::new(1e-10, 1e-12);
        ode.h_min = 1e-10;
        let err = ode.integrate(&sys, 0.0, 2.0, &mut y).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure { .. }));
    }
}
