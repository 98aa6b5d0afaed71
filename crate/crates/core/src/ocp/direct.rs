//! Direct transcription: piecewise-constant controls, RK4 states and the
//! exact discrete adjoint gradient, optimised by projected Newton.

use serde::{Deserialize, Serialize};

use super::discrete::ScaledModel;
use super::newton::{projected_newton, NewtonOptions};
use super::{finish, OcpSetup, OcpSolution, SolverTag};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectOptions {
    /// Projected-gradient residual in dose-rate units.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial guess as a fraction of `u_max`.
    pub initial_fraction: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 100, initial_fraction: 0.5 }
    }
}

pub fn solve_direct(setup: &OcpSetup, opts: &DirectOptions) -> Result<OcpSolution> {
    setup.validate()?;
    let model = ScaledModel::new(setup);
    let u_max = setup.ctrl.u_max;
    let x0 = vec![opts.initial_fraction.clamp(0.0, 1.0) * u_max; setup.n_grid];
    let out = projected_newton(
        |u| model.gradient(u),
        x0,
        model.control_curvature(),
        &NewtonOptions { tol: opts.tol, max_iter: opts.max_iter, upper: u_max, residual_fallback: false },
    );
    let (_, g) = model.gradient(&out.x);
    let curv = model.control_curvature();
    let stationarity = out
        .x
        .iter()
        .zip(&g)
        .map(|(&u, &gi)| (u - (u - gi / curv).clamp(0.0, u_max)).abs())
        .fold(0.0, f64::max);
    finish(setup, &model, out, SolverTag::DirectTranscription, None, stationarity)
}
