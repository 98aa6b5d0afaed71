//! Optimal radiotherapy scheduling on the controlled competition model.
//!
//! The objective is
//!
//! ```text
//! J(u) = ∫_0^T w_H (H - K)^2 + w_C C^2 + w_u u^2 dt
//! ```
//!
//! over piecewise-constant dose rates `u(t) ∈ [0, u_max]`. Two solvers are
//! provided. [`solve_fbsm`] works from Pontryagin's conditions: a forward
//! state sweep, a backward costate sweep and a pointwise Hamiltonian
//! minimisation. [`solve_direct`] transcribes the problem to a finite
//! dimensional box-constrained program whose gradient is the exact discrete
//! adjoint of the integrator.
//!
//! Internally the states are divided by `K`; the public functions in this
//! module work in cells and days.

mod direct;
mod discrete;
mod dose;
mod fbsm;
mod newton;

use serde::{Deserialize, Serialize};

pub use direct::{solve_direct, DirectOptions};
pub use dose::{dose_report, DoseReport, DoseSegment, ScenarioDose};
pub use fbsm::{solve_fbsm, FbsmOptions, SweepUpdate};

use crate::dynamics::{CompetitionParams, ControlParams, State, Trajectory};
use crate::error::{require, require_finite, Error, Result};
use crate::stability::Matrix2;

/// Weights of the running cost terms, applied to cells and dose rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub healthy: f64,
    pub cancer: f64,
    pub control: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { healthy: 1.0, cancer: 1.0, control: 1.0 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("healthy", self.healthy), ("cancer", self.cancer), ("control", self.control)] {
            require_finite(name, v)?;
            require(v >= 0.0, || format!("cost weight {name} must be nonnegative"))?;
        }
        require(self.control > 0.0, || "the control weight must be positive".into())
    }

    fn running(&self, k: f64, s: State) -> f64 {
        self.healthy * (s.h - k).powi(2) + self.cancer * s.c.powi(2)
    }
}

/// Problem definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpSetup {
    pub comp: CompetitionParams,
    pub ctrl: ControlParams,
    /// Initial healthy population (cells).
    pub h0: f64,
    /// Initial cancer population (cells).
    pub c0: f64,
    /// Horizon (days).
    pub t_f: f64,
    /// Number of control intervals.
    pub n_grid: usize,
    /// Longest RK4 step (days); each control interval is split evenly.
    pub max_step: f64,
    pub weights: CostWeights,
}

impl Default for OcpSetup {
    fn default() -> Self {
        Self {
            comp: CompetitionParams::default(),
            ctrl: ControlParams::default(),
            h0: 6.3e5,
            c0: 0.7e5,
            t_f: 100.0,
            n_grid: 200,
            max_step: 0.125,
            weights: CostWeights::default(),
        }
    }
}

impl OcpSetup {
    pub fn validate(&self) -> Result<()> {
        self.comp.validate()?;
        // an ineffective treatment (lambda = mu = 0) is a legitimate experiment here
        self.ctrl.validate_relaxed()?;
        self.weights.validate()?;
        require(self.t_f > 0.0 && self.t_f.is_finite(), || "requires t_f > 0".into())?;
        require(self.n_grid >= 10, || "requires n_grid >= 10".into())?;
        require(self.max_step > 0.0 && self.max_step.is_finite(), || "requires max_step > 0".into())?;
        // keep the explicit scheme inside its stability region
        let fastest = self.comp.r_h.max(self.comp.r_c) + self.comp.gamma * self.comp.k;
        require(self.max_step * fastest <= 2.0, || {
            format!("max_step = {} is too long for rates up to {fastest}/day", self.max_step)
        })?;
        require(State::new(self.h0, self.c0).is_valid(), || {
            "initial condition must lie in the nonnegative quadrant".into()
        })
    }

    /// Control interval length (days).
    pub fn interval(&self) -> f64 {
        self.t_f / self.n_grid as f64
    }

    /// RK4 steps per control interval.
    pub fn substeps(&self) -> usize {
        substeps_for(self.interval(), self.max_step)
    }

    /// Control interval boundaries.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.n_grid).map(|i| self.node_time(i, self.n_grid)).collect()
    }

    fn node_time(&self, i: usize, n: usize) -> f64 {
        if i == n {
            self.t_f
        } else {
            self.t_f * i as f64 / n as f64
        }
    }
}

/// A control that is constant on each interval of `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseControl {
    /// Interval boundaries, strictly increasing.
    pub grid: Vec<f64>,
    /// One value per interval.
    pub values: Vec<f64>,
}

impl PiecewiseControl {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::EmptyGrid("a control grid needs at least one interval".into()));
        }
        if values.len() + 1 != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} intervals", values.len(), grid.len() - 1)));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::GridMismatch("control grid must be strictly increasing".into()));
        }
        Ok(Self { grid, values })
    }

    /// Constant control on a uniform grid.
    pub fn constant(t_f: f64, n: usize, u: f64) -> Result<Self> {
        let grid = (0..=n).map(|i| if i == n { t_f } else { t_f * i as f64 / n as f64 }).collect();
        Self::new(grid, vec![u; n])
    }

    /// Value in force at `t` (right-continuous, last interval closed).
    pub fn at(&self, t: f64) -> f64 {
        let i = self.grid.partition_point(|&g| g <= t).clamp(1, self.values.len());
        self.values[i - 1]
    }

    /// `∫ u dt`.
    pub fn integral(&self) -> f64 {
        self.intervals().map(|(a, b, u)| u * (b - a)).sum()
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.grid.windows(2).zip(&self.values).map(|(w, &u)| (w[0], w[1], u))
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }
}

/// Costate pair `(p_H, p_C)` in cost units per cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub p_h: f64,
    pub p_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverTag {
    #[serde(rename = "indirect-FBSM")]
    IndirectFbsm,
    #[serde(rename = "direct-transcription")]
    DirectTranscription,
}

impl SolverTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverTag::IndirectFbsm => "indirect-FBSM",
            SolverTag::DirectTranscription => "direct-transcription",
        }
    }
}

/// Convergence metadata of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    /// Length of the last projected Newton step (or, for the relaxed sweep,
    /// the last control change), in dose-rate units.
    pub residual: f64,
    /// `max_i |u_i - u_i^*|` with `u^*` the interval-wise minimiser of the
    /// Hamiltonian (indirect) or of its discrete counterpart (direct).
    pub stationarity: f64,
    /// Objective value after each accepted iteration.
    pub history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub control: PiecewiseControl,
    /// States on the integration grid, with the control in force at each node.
    pub trajectory: Trajectory,
    /// Costates on the integration grid (indirect solver only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjoints: Option<Vec<Costate>>,
    pub cost: f64,
    pub accumulated_dose: f64,
    pub solver: SolverTag,
    pub convergence: Convergence,
}

impl OcpSolution {
    pub fn final_state(&self) -> State {
        self.trajectory.last().expect("solutions hold at least the initial state")
    }
}

/// Minimiser of `w u^2 - u (p_H λ H + p_C μ C)` over `[0, u_max]`.
pub fn hamiltonian_control(cp: &ControlParams, s: State, adj: Costate, control_weight: f64) -> f64 {
    let switching = adj.p_h * cp.lambda_h * s.h + adj.p_c * cp.mu_c * s.c;
    (switching / (2.0 * control_weight)).clamp(0.0, cp.u_max)
}

/// Costate derivative `-(∇L + Jᵀ p)` along the controlled field.
pub fn adjoint_rhs(
    p: &CompetitionParams,
    cp: &ControlParams,
    w: &CostWeights,
    s: State,
    adj: Costate,
    u: f64,
) -> (f64, f64) {
    let jt = adjoint_coefficients(p, cp, s, u);
    let grad_h = 2.0 * w.healthy * (s.h - p.k);
    let grad_c = 2.0 * w.cancer * s.c;
    (
        -(grad_h + jt[0][0] * adj.p_h + jt[0][1] * adj.p_c),
        -(grad_c + jt[1][0] * adj.p_h + jt[1][1] * adj.p_c),
    )
}

/// State coefficients of the costate equation, written out independently of
/// the Jacobian so the two can be cross-checked.
pub fn adjoint_coefficients(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64) -> Matrix2 {
    let (h, c, k) = (s.h, s.c, p.k);
    [
        [p.r_h * (1.0 - (2.0 * h + c) / k) - p.gamma * c - cp.lambda_h * u, -p.r_c * c / k],
        [-h * (p.r_h / k + p.gamma), p.r_c * (1.0 - (h + 2.0 * c) / k) - cp.mu_c * u],
    ]
}

/// Composite-trapezoid value of the objective along a trajectory.
///
/// The control term is integrated exactly per trajectory segment using the
/// control in force at the segment midpoint.
pub fn cost(traj: &Trajectory, control: &PiecewiseControl, comp: &CompetitionParams, w: &CostWeights) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::EmptyGrid("trajectory needs at least two samples".into()));
    }
    if traj.states.len() != traj.times.len() {
        return Err(Error::GridMismatch("times and states differ in length".into()));
    }
    let (t0, t1) = (traj.times[0], traj.times[traj.len() - 1]);
    let tol = 1e-9 * t1.abs().max(1.0);
    if (t0 - control.grid[0]).abs() > tol || (t1 - control.horizon()).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "trajectory spans [{t0}, {t1}] but the control spans [{}, {}]",
            control.grid[0],
            control.horizon()
        )));
    }
    let total = traj
        .times
        .windows(2)
        .zip(traj.states.windows(2))
        .map(|(t, s)| {
            let dt = t[1] - t[0];
            let u = control.at(0.5 * (t[0] + t[1]));
            0.5 * dt * (w.running(comp.k, s[0]) + w.running(comp.k, s[1])) + w.control * u * u * dt
        })
        .sum();
    Ok(total)
}

/// Trajectory of the controlled system under a piecewise-constant control,
/// integrated with fixed RK4 steps no longer than `max_step`.
pub fn simulate_control(setup: &OcpSetup, control: &PiecewiseControl) -> Result<Trajectory> {
    setup.validate()?;
    if let Some(&u) = control.values.iter().find(|&&u| !(0.0..=setup.ctrl.u_max).contains(&u)) {
        return Err(Error::ControlOutOfBounds { value: u, u_max: setup.ctrl.u_max });
    }
    let model = discrete::ScaledModel::new(setup);
    Ok(model.trajectory(&model.forward_on(control)?, control))
}

/// Cost of the interval values `u` on the setup's control grid and its exact
/// gradient, obtained by reverse differentiation through the RK4 steps.
pub fn cost_gradient(setup: &OcpSetup, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    setup.validate()?;
    if u.len() != setup.n_grid {
        return Err(Error::GridMismatch(format!("{} control values for {} intervals", u.len(), setup.n_grid)));
    }
    if let Some(&v) = u.iter().find(|&&v| !(0.0..=setup.ctrl.u_max).contains(&v)) {
        return Err(Error::ControlOutOfBounds { value: v, u_max: setup.ctrl.u_max });
    }
    let model = discrete::ScaledModel::new(setup);
    let (j, g) = model.gradient(u);
    Ok((model.unscale_cost(j), g.into_iter().map(|v| model.unscale_cost(v)).collect()))
}

fn substeps_for(len: f64, max_step: f64) -> usize {
    // the small allowance keeps exact multiples from rounding up
    ((len / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

fn finish(
    setup: &OcpSetup,
    model: &discrete::ScaledModel,
    out: newton::NewtonOutcome,
    solver: SolverTag,
    adjoints: Option<Vec<Costate>>,
    stationarity: f64,
) -> Result<OcpSolution> {
    let u_max = setup.ctrl.u_max;
    let values = out.x.iter().map(|u| u.clamp(0.0, u_max)).collect();
    let control = PiecewiseControl::new(setup.grid(), values)?;
    let trajectory = model.trajectory(&model.forward_on(&control)?, &control);
    let cost = cost(&trajectory, &control, &setup.comp, &setup.weights)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite { t: setup.t_f });
    }
    Ok(OcpSolution {
        accumulated_dose: control.integral(),
        control,
        trajectory,
        adjoints,
        cost,
        solver,
        convergence: Convergence {
            converged: out.converged,
            iterations: out.iterations,
            residual: out.residual,
            stationarity,
            history: out.history.iter().map(|&j| model.unscale_cost(j)).collect(),
            message: out.message,
        },
    })
}
