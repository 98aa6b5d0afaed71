//! Scaled model shared by both solvers: forward RK4 sweeps, the exact
//! discrete adjoint of the transcribed objective, and the continuous
//! costate sweep used by the indirect method.

use super::{substeps_for, Costate, OcpSetup, PiecewiseControl};
use crate::dynamics::{State, Trajectory};
use crate::error::{Error, Result};

type Vec2 = [f64; 2];

/// Controlled competition model with populations divided by `K`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledModel {
    r_h: f64,
    r_c: f64,
    /// `gamma * K`
    gamma: f64,
    lambda: f64,
    mu: f64,
    w_h: f64,
    w_c: f64,
    /// `w_u / K^2`
    w_u: f64,
    pub k: f64,
    pub x0: Vec2,
    pub n: usize,
    pub m: usize,
    max_step: f64,
    pub t_f: f64,
}

/// Output of a forward/backward costate sweep.
pub(crate) struct Sweep {
    pub costates: Vec<Vec2>,
    pub objective: f64,
    /// Interval averages of the switching function `p_H λ h + p_C μ c`.
    pub switching: Vec<f64>,
}

impl ScaledModel {
    pub fn new(s: &OcpSetup) -> Self {
        let k = s.comp.k;
        Self {
            r_h: s.comp.r_h,
            r_c: s.comp.r_c,
            gamma: s.comp.gamma * k,
            lambda: s.ctrl.lambda_h,
            mu: s.ctrl.mu_c,
            w_h: s.weights.healthy,
            w_c: s.weights.cancer,
            w_u: s.weights.control / (k * k),
            k,
            x0: [s.h0 / k, s.c0 / k],
            n: s.n_grid,
            m: s.substeps(),
            max_step: s.max_step,
            t_f: s.t_f,
        }
    }

    /// Control interval length.
    pub fn dt(&self) -> f64 {
        self.t_f / self.n as f64
    }

    fn step_len(&self) -> f64 {
        self.dt() / self.m as f64
    }

    /// Curvature `2 w_u Δt` of the control term in each interval.
    pub fn control_curvature(&self) -> f64 {
        2.0 * self.w_u * self.dt()
    }

    /// Physical cost corresponding to a scaled objective value.
    pub fn unscale_cost(&self, j: f64) -> f64 {
        j * self.k * self.k
    }

    #[inline]
    fn f(&self, x: &Vec2, u: f64) -> Vec2 {
        let free = 1.0 - x[0] - x[1];
        [
            self.r_h * x[0] * free - self.gamma * x[0] * x[1] - self.lambda * u * x[0],
            self.r_c * x[1] * free - self.mu * u * x[1],
        ]
    }

    #[inline]
    fn jac(&self, x: &Vec2, u: f64) -> [Vec2; 2] {
        let (h, c) = (x[0], x[1]);
        [
            [self.r_h * (1.0 - 2.0 * h - c) - self.gamma * c - self.lambda * u, -(self.r_h + self.gamma) * h],
            [-self.r_c * c, self.r_c * (1.0 - h - 2.0 * c) - self.mu * u],
        ]
    }

    #[inline]
    fn f_u(&self, x: &Vec2) -> Vec2 {
        [-self.lambda * x[0], -self.mu * x[1]]
    }

    #[inline]
    fn running(&self, x: &Vec2) -> f64 {
        self.w_h * (x[0] - 1.0).powi(2) + self.w_c * x[1] * x[1]
    }

    #[inline]
    fn running_grad(&self, x: &Vec2) -> Vec2 {
        [2.0 * self.w_h * (x[0] - 1.0), 2.0 * self.w_c * x[1]]
    }

    fn rk4(&self, x: &Vec2, u: f64, h: f64) -> Vec2 {
        let k1 = self.f(x, u);
        let k2 = self.f(&axpy(x, 0.5 * h, &k1), u);
        let k3 = self.f(&axpy(x, 0.5 * h, &k2), u);
        let k4 = self.f(&axpy(x, h, &k3), u);
        std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Reverse-mode derivative of one RK4 step: given the adjoint of the
    /// step output, returns the adjoints of the input state and of `u`.
    fn rk4_vjp(&self, x: &Vec2, u: f64, h: f64, out: &Vec2) -> (Vec2, f64) {
        let k1 = self.f(x, u);
        let y2 = axpy(x, 0.5 * h, &k1);
        let k2 = self.f(&y2, u);
        let y3 = axpy(x, 0.5 * h, &k2);
        let k3 = self.f(&y3, u);
        let y4 = axpy(x, h, &k3);

        let mut a = [scale(out, h / 6.0), scale(out, h / 3.0), scale(out, h / 3.0), scale(out, h / 6.0)];
        let mut gx = *out;
        let mut gu = 0.0;
        let stages = [(x, 0.0), (&y2, 0.5 * h), (&y3, 0.5 * h), (&y4, h)];
        for s in (0..4).rev() {
            let (y, feed) = stages[s];
            let back = mat_t_vec(&self.jac(y, u), &a[s]);
            gu += dot(&self.f_u(y), &a[s]);
            gx = add(&gx, &back);
            if s > 0 {
                a[s - 1] = axpy(&a[s - 1], feed, &back);
            }
        }
        (gx, gu)
    }

    /// States at every RK4 node (`n * m + 1` of them).
    pub fn forward(&self, u: &[f64]) -> Vec<Vec2> {
        let h = self.step_len();
        let mut xs = Vec::with_capacity(self.n * self.m + 1);
        let mut x = self.x0;
        xs.push(x);
        for &ui in u {
            for _ in 0..self.m {
                x = self.rk4(&x, ui, h);
                xs.push(x);
            }
        }
        xs
    }

    /// Scaled objective by the composite trapezoid rule.
    pub fn objective_of(&self, xs: &[Vec2], u: &[f64]) -> f64 {
        let h = self.step_len();
        let state: f64 = xs.windows(2).map(|w| 0.5 * h * (self.running(&w[0]) + self.running(&w[1]))).sum();
        state + self.w_u * self.dt() * u.iter().map(|v| v * v).sum::<f64>()
    }

    #[cfg(test)]
    pub fn objective(&self, u: &[f64]) -> f64 {
        self.objective_of(&self.forward(u), u)
    }

    /// Objective and its exact gradient with respect to the interval values.
    pub fn gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let xs = self.forward(u);
        let j = self.objective_of(&xs, u);
        let h = self.step_len();
        let last = xs.len() - 1;
        let mut lam = scale(&self.running_grad(&xs[last]), 0.5 * h);
        let mut g: Vec<f64> = u.iter().map(|&v| 2.0 * self.w_u * self.dt() * v).collect();
        for k in (0..last).rev() {
            let i = k / self.m;
            let (gx, gu) = self.rk4_vjp(&xs[k], u[i], h, &lam);
            g[i] += gu;
            let weight = if k == 0 { 0.5 * h } else { h };
            lam = axpy(&gx, weight, &self.running_grad(&xs[k]));
        }
        (j, g)
    }

    /// Forward RK4 sweep followed by a backward RK4 sweep of the continuous
    /// costate equation `p' = -(∇L + Jᵀ p)`, `p(T) = 0`.
    pub fn sweep(&self, u: &[f64]) -> Sweep {
        let xs = self.forward(u);
        let objective = self.objective_of(&xs, u);
        let h = self.step_len();
        let last = xs.len() - 1;
        let mut ps = vec![[0.0; 2]; xs.len()];
        let rhs = |x: &Vec2, p: &Vec2, u: f64| -> Vec2 {
            let jt = mat_t_vec(&self.jac(x, u), p);
            let g = self.running_grad(x);
            [-(g[0] + jt[0]), -(g[1] + jt[1])]
        };
        for k in (0..last).rev() {
            let ui = u[k / self.m];
            let (xa, xb) = (&xs[k], &xs[k + 1]);
            // cubic Hermite midpoint of the state over the step
            let (fa, fb) = (self.f(xa, ui), self.f(xb, ui));
            let xm: Vec2 = std::array::from_fn(|i| 0.5 * (xa[i] + xb[i]) + h / 8.0 * (fa[i] - fb[i]));
            let p = ps[k + 1];
            let k1 = rhs(xb, &p, ui);
            let k2 = rhs(&xm, &axpy(&p, -0.5 * h, &k1), ui);
            let k3 = rhs(&xm, &axpy(&p, -0.5 * h, &k2), ui);
            let k4 = rhs(xa, &axpy(&p, -h, &k3), ui);
            ps[k] = std::array::from_fn(|i| p[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        let switching = (0..self.n)
            .map(|i| {
                let values: Vec<f64> = (i * self.m..=(i + 1) * self.m)
                    .map(|k| -dot(&ps[k], &self.f_u(&xs[k])))
                    .collect();
                average(&values)
            })
            .collect();
        Sweep { costates: ps, objective, switching }
    }

    /// Pontryagin gradient `(2 w_u u_i - σ_i) Δt` of a sweep.
    pub fn pontryagin_gradient(&self, sweep: &Sweep, u: &[f64]) -> Vec<f64> {
        let dt = self.dt();
        u.iter().zip(&sweep.switching).map(|(&v, &s)| (2.0 * self.w_u * v - s) * dt).collect()
    }

    /// Pointwise Hamiltonian minimiser per interval.
    pub fn hamiltonian_update(&self, sweep: &Sweep, u_max: f64) -> Vec<f64> {
        sweep.switching.iter().map(|s| (s / (2.0 * self.w_u)).clamp(0.0, u_max)).collect()
    }

    /// Physical costate from a scaled one.
    pub fn unscale_costate(&self, p: &Vec2) -> Costate {
        Costate { p_h: p[0] * self.k, p_c: p[1] * self.k }
    }

    /// Integrate on an arbitrary control grid.
    pub fn forward_on(&self, control: &PiecewiseControl) -> Result<(Vec<f64>, Vec<Vec2>)> {
        let mut times = vec![control.grid[0]];
        let mut xs = vec![self.x0];
        let mut x = self.x0;
        for (a, b, u) in control.intervals() {
            let m = substeps_for(b - a, self.max_step);
            let h = (b - a) / m as f64;
            for j in 1..=m {
                x = self.rk4(&x, u, h);
                if !(x[0].is_finite() && x[1].is_finite()) {
                    return Err(Error::NonFinite { t: a + j as f64 * h });
                }
                xs.push(x);
                times.push(if j == m { b } else { a + j as f64 * h });
            }
        }
        Ok((times, xs))
    }

    /// Physical trajectory with node controls from scaled states.
    pub fn trajectory(&self, (times, xs): &(Vec<f64>, Vec<Vec2>), control: &PiecewiseControl) -> Trajectory {
        let controls = times.iter().map(|&t| control.at(t)).collect();
        Trajectory {
            times: times.clone(),
            states: xs.iter().map(|x| State::new((x[0] * self.k).max(0.0), (x[1] * self.k).max(0.0))).collect(),
            controls: Some(controls),
        }
    }
}

/// Mean of equally spaced samples: Simpson when the panel count is even.
fn average(v: &[f64]) -> f64 {
    let panels = v.len() - 1;
    if panels.is_multiple_of(2) {
        let inner: f64 = v[1..panels].iter().enumerate().map(|(i, x)| if i % 2 == 0 { 4.0 * x } else { 2.0 * x }).sum();
        (v[0] + v[panels] + inner) / (3.0 * panels as f64)
    } else {
        let inner: f64 = v[1..panels].iter().sum();
        (0.5 * (v[0] + v[panels]) + inner) / panels as f64
    }
}

#[inline]
fn axpy(x: &Vec2, a: f64, y: &Vec2) -> Vec2 {
    [x[0] + a * y[0], x[1] + a * y[1]]
}

#[inline]
fn add(x: &Vec2, y: &Vec2) -> Vec2 {
    [x[0] + y[0], x[1] + y[1]]
}

#[inline]
fn scale(x: &Vec2, a: f64) -> Vec2 {
    [a * x[0], a * x[1]]
}

#[inline]
fn dot(x: &Vec2, y: &Vec2) -> f64 {
    x[0] * y[0] + x[1] * y[1]
}

/// `Mᵀ v` for a row-major 2x2 matrix.
#[inline]
fn mat_t_vec(m: &[Vec2; 2], v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[1][0] * v[1], m[0][1] * v[0] + m[1][1] * v[1]]
}
