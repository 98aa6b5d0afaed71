//! Forward-backward sweep on Pontryagin's conditions.
//!
//! Each sweep integrates the state forward, the costate backward from
//! `p(T) = 0`, and minimises the Hamiltonian interval by interval. The
//! classic update blends the minimiser into the current control. With the
//! default weights that fixed-point map is far from contractive, so the
//! default update instead applies projected Newton to the stationarity
//! condition `2 w_u u - σ = 0`, with curvature from additional sweeps.

use serde::{Deserialize, Serialize};

use super::discrete::ScaledModel;
use super::newton::{projected_newton, NewtonOptions, NewtonOutcome};
use super::{finish, OcpSetup, OcpSolution, SolverTag};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepUpdate {
    /// Projected Newton on the Pontryagin stationarity condition.
    Newton,
    /// `u <- (1 - relax) u + relax u*`, halving `relax` after three
    /// consecutive increases of the control change.
    Relaxed { relax: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbsmOptions {
    /// Bound on `max |u - u*|` in dose-rate units.
    pub tol: f64,
    pub max_iter: usize,
    pub update: SweepUpdate,
    /// Initial guess as a fraction of `u_max`.
    pub initial_fraction: f64,
}

impl Default for FbsmOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 100, update: SweepUpdate::Newton, initial_fraction: 0.5 }
    }
}

pub fn solve_fbsm(setup: &OcpSetup, opts: &FbsmOptions) -> Result<OcpSolution> {
    setup.validate()?;
    let model = ScaledModel::new(setup);
    let u_max = setup.ctrl.u_max;
    let x0 = vec![opts.initial_fraction.clamp(0.0, 1.0) * u_max; setup.n_grid];
    let out = match opts.update {
        SweepUpdate::Newton => projected_newton(
            |u| {
                let sweep = model.sweep(u);
                (sweep.objective, model.pontryagin_gradient(&sweep, u))
            },
            x0,
            model.control_curvature(),
            &NewtonOptions { tol: opts.tol, max_iter: opts.max_iter, upper: u_max, residual_fallback: true },
        ),
        SweepUpdate::Relaxed { relax } => relaxed(&model, x0, relax, u_max, opts),
    };
    let sweep = model.sweep(&out.x);
    let costates = sweep.costates.iter().map(|p| model.unscale_costate(p)).collect();
    let target = model.hamiltonian_update(&sweep, u_max);
    let stationarity = out.x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    finish(setup, &model, out, SolverTag::IndirectFbsm, Some(costates), stationarity)
}

fn relaxed(model: &ScaledModel, mut u: Vec<f64>, relax: f64, u_max: f64, opts: &FbsmOptions) -> NewtonOutcome {
    let mut relax = relax.clamp(f64::MIN_POSITIVE, 1.0);
    let mut history = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut rising = 0;
    for iter in 0..opts.max_iter {
        let sweep = model.sweep(&u);
        history.push(sweep.objective);
        let target = model.hamiltonian_update(&sweep, u_max);
        let change = u.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < opts.tol {
            return NewtonOutcome { x: u, residual: change, iterations: iter, converged: true, history, message: None };
        }
        rising = if change > last_change { rising + 1 } else { 0 };
        if rising >= 3 {
            relax *= 0.5;
            rising = 0;
        }
        last_change = change;
        for (a, b) in u.iter_mut().zip(&target) {
            *a = ((1.0 - relax) * *a + relax * b).clamp(0.0, u_max);
        }
    }
    let target = model.hamiltonian_update(&model.sweep(&u), u_max);
    let residual = u.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    NewtonOutcome {
        x: u,
        residual,
        iterations: opts.max_iter,
        converged: residual < opts.tol,
        history,
        message: Some(format!("sweep limit {} reached (relaxation {relax:e})", opts.max_iter)),
    }
}
