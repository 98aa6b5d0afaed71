//! Explicit Runge-Kutta integrators.
//!
//! [`dopri5`] is an adaptive Dormand-Prince 5(4) scheme with standard
//! mixed absolute/relative error control. [`rk4_step`] is the classical
//! fixed-step method used where switching times must fall on grid nodes.

use crate::error::{Error, Result};

/// Options for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub max_steps: usize,
    /// Clip components that undershoot zero by less than `1e3 * atol`.
    /// Larger undershoots are reported as [`Error::Negativity`].
    pub nonnegative: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-6,
            h_init: None,
            h_min: 1e-12,
            max_steps: 1_000_000,
            nonnegative: false,
        }
    }
}

/// Accepted steps of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub rejected: usize,
}

impl<const N: usize> OdeSolution<N> {
    pub fn last(&self) -> [f64; N] {
        *self.y.last().expect("solution holds at least the initial point")
    }
}

// Dormand-Prince coefficients.
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
// difference between the 5th and 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (a, k) in terms {
        for i in 0..N {
            out[i] += a * k[i];
        }
    }
    out
}

fn all_finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrate `y' = f(t, y)` from `t_span.0` to `t_span.1`.
///
/// `stops` lists additional times (inside the span) that must be hit exactly;
/// they appear in the output together with every accepted step.
pub fn dopri5<const N: usize, F>(
    mut f: F,
    y0: [f64; N],
    t_span: (f64, f64),
    stops: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution<N>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let (t0, tf) = t_span;
    if !t0.is_finite() || !tf.is_finite() || t0 >= tf {
        return Err(Error::Domain(format!("invalid time span ({t0}, {tf})")));
    }
    if opts.rtol.is_nan() || opts.atol.is_nan() || opts.rtol <= 0.0 || opts.atol <= 0.0 {
        return Err(Error::InvalidParameter("integrator tolerances must be positive".into()));
    }
    if !all_finite(&y0) {
        return Err(Error::NonFinite { t: t0 });
    }

    let mut stops: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < tf).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(tf);
    let mut next_stop = 0;

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    if !all_finite(&k1) {
        return Err(Error::NonFinite { t });
    }

    let scale = |y: &[f64; N], i: usize| opts.atol + opts.rtol * y[i].abs();
    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            // Hairer-Norsett-Wanner starting step heuristic, first stage only
            let d0 = (0..N).map(|i| (y[i] / scale(&y, i)).powi(2)).sum::<f64>() / N as f64;
            let d1 = (0..N).map(|i| (k1[i] / scale(&y, i)).powi(2)).sum::<f64>() / N as f64;
            let h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * (d0 / d1).sqrt() };
            h0.min(tf - t0)
        }
    };

    let mut sol = OdeSolution { t: vec![t], y: vec![y], rejected: 0 };
    let mut steps = 0usize;
    let neg_limit = -1e3 * opts.atol;

    while t < tf {
        if steps >= opts.max_steps {
            return Err(Error::MaxSteps(opts.max_steps));
        }
        let target = stops[next_stop];
        let mut hit = false;
        if t + h >= target || (target - t - h) < 1e-12 * target.abs().max(1.0) {
            h = target - t;
            hit = true;
        }
        if h < opts.h_min && !hit {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        let k2 = f(t + C2 * h, &axpy(&y, &[(h * A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]));
        let k4 = f(t + C4 * h, &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]));
        let k5 = f(
            t + C5 * h,
            &axpy(&y, &[(h * A51, &k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                &[(h * A61, &k1), (h * A62, &k2), (h * A63, &k3), (h * A64, &k4), (h * A65, &k5)],
            ),
        );
        let y_new = axpy(&y, &[(h * B1, &k1), (h * B3, &k3), (h * B4, &k4), (h * B5, &k5), (h * B6, &k6)]);
        let k7 = f(t + h, &y_new);

        let mut err = 0.0;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() || !all_finite(&y_new) {
            // shrink aggressively; a genuinely non-finite field fails below h_min
            if h <= opts.h_min {
                return Err(Error::NonFinite { t });
            }
            h *= 0.1;
            sol.rejected += 1;
            steps += 1;
            continue;
        }

        if err <= 1.0 {
            t = if hit { target } else { t + h };
            y = y_new;
            if opts.nonnegative {
                for v in y.iter_mut() {
                    if *v < 0.0 {
                        if *v < neg_limit {
                            return Err(Error::Negativity { t, value: *v });
                        }
                        *v = 0.0;
                    }
                }
                k1 = f(t, &y);
            } else {
                k1 = k7;
            }
            if !all_finite(&k1) {
                return Err(Error::NonFinite { t });
            }
            sol.t.push(t);
            sol.y.push(y);
            if hit {
                next_stop += 1;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            sol.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
        steps += 1;
    }
    Ok(sol)
}

/// One classical RK4 step for an autonomous field.
#[inline]
pub fn rk4_step<const N: usize, F>(f: &F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&axpy(y, &[(0.5 * h, &k1)]));
    let k3 = f(&axpy(y, &[(0.5 * h, &k2)]));
    let k4 = f(&axpy(y, &[(h, &k3)]));
    axpy(y, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let sol = dopri5(|_, y: &[f64; 1]| [-0.7 * y[0]], [2.0], (0.0, 10.0), &[], &opts).unwrap();
        let exact = 2.0 * (-7.0f64).exp();
        assert!((sol.last()[0] - exact).abs() / exact < 1e-8);
        assert_eq!(*sol.t.last().unwrap(), 10.0);
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let sol = dopri5(|_, y: &[f64; 2]| [y[1], -y[0]], [1.0, 0.0], (0.0, 20.0), &[], &opts).unwrap();
        let [x, v] = sol.last();
        assert!((x - 20.0f64.cos()).abs() < 1e-8);
        assert!((v + 20.0f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn stops_are_hit_exactly() {
        let stops = [0.3, 1.7, 2.0, 5.5];
        let sol = dopri5(|_, y: &[f64; 1]| [y[0]], [1.0], (0.0, 3.0), &stops, &OdeOptions::default()).unwrap();
        for s in [0.3, 1.7, 2.0] {
            assert!(sol.t.contains(&s), "missing stop {s}");
        }
        assert!(!sol.t.contains(&5.5));
        assert!(sol.t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_field_keeps_state() {
        let sol = dopri5(|_, _y: &[f64; 2]| [0.0, 0.0], [3.0, 4.0], (0.0, 50.0), &[], &OdeOptions::default()).unwrap();
        assert!(sol.y.iter().all(|y| *y == [3.0, 4.0]));
    }

    #[test]
    fn blow_up_is_reported() {
        // y' = y^2 from 1 blows up at t = 1
        let r = dopri5(|_, y: &[f64; 1]| [y[0] * y[0]], [1.0], (0.0, 2.0), &[], &OdeOptions::default());
        assert!(matches!(
            r,
            Err(Error::StepSizeUnderflow { .. }) | Err(Error::NonFinite { .. }) | Err(Error::MaxSteps(_))
        ));
    }

    #[test]
    fn negativity_is_clipped_or_rejected() {
        let opts = OdeOptions { nonnegative: true, ..Default::default() };
        // linear decay never crosses zero; clipping must leave it intact
        let sol = dopri5(|_, y: &[f64; 1]| [-5.0 * y[0]], [1.0], (0.0, 30.0), &[], &opts).unwrap();
        assert!(sol.y.iter().all(|y| y[0] >= 0.0));
        // constant negative drift goes far below zero
        let r = dopri5(|_, _y: &[f64; 1]| [-1.0], [1.0], (0.0, 10.0), &[], &opts);
        assert!(matches!(r, Err(Error::Negativity { .. })));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = |y: &[f64; 1]| [-y[0]];
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0];
            for _ in 0..n {
                y = rk4_step(&f, &y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = run(10) / run(20);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }
}
