//! Coupled healthy/cancer population dynamics.
//!
//! Three vector fields share one parameter record:
//!
//! * coexistence: `H' = r_H (1 - (H+C)/K_H) H`, `C' = r_C (1 - (H+C)/K_C) C`
//! * competition: a shared capacity `K` plus the `-gamma H C` penalty on `H`
//! * controlled: competition with radiotherapy terms `-lambda u H`, `-mu u C`
//!
//! [`integrate`] wraps the adaptive integrator with the nonnegativity
//! projection these models need near extinction.

use serde::{Deserialize, Serialize};

use crate::error::{require, require_finite, Error, Result};
use crate::ode::{dopri5, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompetitionParams {
    /// Healthy growth rate (1/day).
    pub r_h: f64,
    /// Cancer growth rate (1/day).
    pub r_c: f64,
    /// Healthy carrying capacity of the coexistence system (cells).
    pub k_h: f64,
    /// Cancer carrying capacity of the coexistence system (cells).
    pub k_c: f64,
    /// Shared carrying capacity (cells).
    pub k: f64,
    /// Competition coefficient (1/(cell day)).
    pub gamma: f64,
}

impl Default for CompetitionParams {
    fn default() -> Self {
        Self { r_h: 3.0, r_c: 0.6, k_h: 7e5, k_c: 7e5, k: 7e5, gamma: 5.5e-8 }
    }
}

impl CompetitionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_h", self.r_h),
            ("r_c", self.r_c),
            ("k_h", self.k_h),
            ("k_c", self.k_c),
            ("k", self.k),
            ("gamma", self.gamma),
        ] {
            require_finite(name, v)?;
        }
        require(self.r_h > 0.0 && self.r_c > 0.0, || "requires r_h > 0 and r_c > 0".into())?;
        require(self.k_h > 0.0 && self.k_c > 0.0 && self.k > 0.0, || {
            "requires positive carrying capacities".into()
        })?;
        require(self.gamma >= 0.0, || "requires gamma >= 0".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlParams {
    /// Treatment impact on healthy cells.
    pub lambda_h: f64,
    /// Treatment impact on cancer cells.
    pub mu_c: f64,
    /// Upper bound of the dose rate.
    pub u_max: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self { lambda_h: 0.025, mu_c: 0.189, u_max: 1.0 }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_h", self.lambda_h), ("mu_c", self.mu_c), ("u_max", self.u_max)] {
            require_finite(name, v)?;
        }
        require(self.lambda_h >= 0.0, || "requires lambda_h >= 0".into())?;
        require(self.lambda_h < self.mu_c, || "requires lambda_h < mu_c".into())?;
        require(self.mu_c <= 1.0, || "requires mu_c <= 1".into())?;
        require(self.u_max > 0.0 && self.u_max <= 1.0, || "requires 0 < u_max <= 1".into())
    }

    /// Same as [`validate`](Self::validate) but without the `lambda < mu`
    /// ordering, for degenerate experiments such as an ineffective treatment.
    pub(crate) fn validate_relaxed(&self) -> Result<()> {
        require(
            self.lambda_h >= 0.0 && self.mu_c >= 0.0 && self.lambda_h.is_finite() && self.mu_c.is_finite(),
            || "requires finite lambda_h, mu_c >= 0".into(),
        )?;
        require(self.u_max > 0.0 && self.u_max <= 1.0, || "requires 0 < u_max <= 1".into())
    }

    pub fn check_control(&self, u: f64) -> Result<()> {
        if (0.0..=self.u_max).contains(&u) {
            Ok(())
        } else {
            Err(Error::ControlOutOfBounds { value: u, u_max: self.u_max })
        }
    }
}

/// Healthy and cancer populations (cells).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub h: f64,
    pub c: f64,
}

impl State {
    pub const fn new(h: f64, c: f64) -> Self {
        Self { h, c }
    }

    pub fn is_valid(&self) -> bool {
        self.h >= 0.0 && self.c >= 0.0 && self.h.is_finite() && self.c.is_finite()
    }

    fn to_array(self) -> [f64; 2] {
        [self.h, self.c]
    }
}

/// Time series of states with optional control samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<State> {
        self.states.last().copied()
    }

    /// Checks ordering, lengths and state nonnegativity.
    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() {
            return Err(Error::GridMismatch(format!(
                "{} times but {} states",
                self.times.len(),
                self.states.len()
            )));
        }
        if let Some(u) = &self.controls {
            if u.len() != self.times.len() {
                return Err(Error::GridMismatch(format!("{} times but {} controls", self.times.len(), u.len())));
            }
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::GridMismatch("times must be strictly increasing".into()));
        }
        if let Some(s) = self.states.iter().find(|s| !s.is_valid()) {
            return Err(Error::Domain(format!("invalid state ({}, {})", s.h, s.c)));
        }
        Ok(())
    }
}

/// Coexistence field with separate capacities.
pub fn rhs_coexistence(p: &CompetitionParams, s: State) -> (f64, f64) {
    let total = s.h + s.c;
    (p.r_h * (1.0 - total / p.k_h) * s.h, p.r_c * (1.0 - total / p.k_c) * s.c)
}

/// Competition field with shared capacity and the `gamma` term.
pub fn rhs_competition(p: &CompetitionParams, s: State) -> (f64, f64) {
    let free = 1.0 - (s.h + s.c) / p.k;
    (p.r_h * free * s.h - p.gamma * s.h * s.c, p.r_c * free * s.c)
}

/// Competition field with radiotherapy at dose rate `u`.
pub fn rhs_controlled(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64) -> Result<(f64, f64)> {
    cp.check_control(u)?;
    Ok(controlled_unchecked(p, cp, s, u))
}

#[inline]
pub(crate) fn controlled_unchecked(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64) -> (f64, f64) {
    let (dh, dc) = rhs_competition(p, s);
    (dh - cp.lambda_h * u * s.h, dc - cp.mu_c * u * s.c)
}

/// Which of the vector fields to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Coexistence,
    Competition,
    Controlled,
}

/// A vector field bundled with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorField {
    pub system: System,
    pub params: CompetitionParams,
    pub control: ControlParams,
    /// Constant dose rate, used by [`System::Controlled`].
    pub u: f64,
}

impl VectorField {
    pub fn uncontrolled(system: System, params: CompetitionParams) -> Self {
        Self { system, params, control: ControlParams { lambda_h: 0.0, mu_c: 0.0, u_max: 1.0 }, u: 0.0 }
    }

    pub fn constant_control(params: CompetitionParams, control: ControlParams, u: f64) -> Result<Self> {
        control.check_control(u)?;
        Ok(Self { system: System::Controlled, params, control, u })
    }

    pub fn eval(&self, s: State) -> (f64, f64) {
        match self.system {
            System::Coexistence => rhs_coexistence(&self.params, s),
            System::Competition => rhs_competition(&self.params, s),
            System::Controlled => controlled_unchecked(&self.params, &self.control, s, self.u),
        }
    }

    /// Capacity used for scaling tolerances.
    pub fn capacity(&self) -> f64 {
        match self.system {
            System::Coexistence => self.params.k_h.max(self.params.k_c),
            _ => self.params.k,
        }
    }
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationTolerance {
    pub rtol: f64,
    /// Absolute tolerance (cells).
    pub atol: f64,
}

impl Default for IntegrationTolerance {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-6 }
    }
}

/// Integrate a two-population field from `s0` over `t_span`.
///
/// Accepted steps are projected onto the nonnegative quadrant; an undershoot
/// larger than `1e3 * atol` is an error. `sample_times` are inserted as
/// mandatory nodes.
pub fn integrate<F>(
    rhs: F,
    s0: State,
    t_span: (f64, f64),
    tol: IntegrationTolerance,
    sample_times: &[f64],
) -> Result<Trajectory>
where
    F: Fn(State) -> (f64, f64),
{
    if tol.rtol.is_nan() || tol.atol.is_nan() || tol.rtol <= 0.0 || tol.atol <= 0.0 {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    if !s0.is_valid() {
        return Err(Error::Domain(format!("initial state ({}, {}) is not in the nonnegative quadrant", s0.h, s0.c)));
    }
    let opts = OdeOptions { rtol: tol.rtol, atol: tol.atol, nonnegative: true, ..Default::default() };
    let sol = dopri5(
        |_, y: &[f64; 2]| {
            let (dh, dc) = rhs(State::new(y[0], y[1]));
            [dh, dc]
        },
        s0.to_array(),
        t_span,
        sample_times,
        &opts,
    )?;
    Ok(Trajectory {
        times: sol.t,
        states: sol.y.into_iter().map(|y| State::new(y[0], y[1])).collect(),
        controls: None,
    })
}

/// Restrict a trajectory to the given nodes (which must be among its times).
pub fn resample_at(traj: &Trajectory, times: &[f64]) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(times.len());
    let mut j = 0;
    for &t in times {
        while j < traj.times.len() && traj.times[j] < t {
            j += 1;
        }
        match traj.times.get(j) {
            Some(&tj) if tj == t => states.push(traj.states[j]),
            _ => return Err(Error::GridMismatch(format!("time {t} is not a node of the trajectory"))),
        }
    }
    Ok(Trajectory { times: times.to_vec(), states, controls: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::logistic;
    use proptest::prelude::*;

    fn table() -> CompetitionParams {
        CompetitionParams::default()
    }

    #[test]
    fn coexistence_fixed_points() {
        let p = table();
        assert_eq!(rhs_coexistence(&p, State::new(0.0, 0.0)), (0.0, 0.0));
        assert_eq!(rhs_coexistence(&p, State::new(p.k_h, 0.0)), (0.0, 0.0));
        let (dh, dc) = rhs_coexistence(&p, State::new(6.3e5, 0.7e5));
        assert!(dh.abs() < 1e-9 && dc.abs() < 1e-9);
    }

    #[test]
    fn competition_examples() {
        let p = table();
        assert_eq!(rhs_competition(&p, State::new(0.0, p.k)), (0.0, 0.0));
        let (dh, dc) = rhs_competition(&p, State::new(6.3e5, 0.7e5));
        // only the interaction term survives on H + C = K: -gamma * H * C
        assert!((dh - (-5.5e-8 * 6.3e5 * 0.7e5)).abs() < 1e-9, "{dh}");
        assert!((dh - (-2425.5)).abs() < 1e-9, "{dh}");
        assert!(dc.abs() < 1e-9);
    }

    #[test]
    fn controlled_examples() {
        let p = table();
        let cp = ControlParams::default();
        let s = State::new(6.3e5, 0.7e5);
        assert_eq!(rhs_controlled(&p, &cp, s, 0.0).unwrap(), rhs_competition(&p, s));
        assert_eq!(rhs_controlled(&p, &cp, State::default(), 0.4).unwrap(), (0.0, 0.0));
        let (dh, dc) = rhs_controlled(&p, &cp, s, 0.7).unwrap();
        assert!((dh - (-2425.5 - 0.025 * 0.7 * 6.3e5)).abs() < 1e-6, "{dh}");
        assert!((dc - (-9261.0)).abs() < 1e-6, "{dc}");
        assert!(matches!(rhs_controlled(&p, &cp, s, 1.2), Err(Error::ControlOutOfBounds { .. })));
        assert!(rhs_controlled(&p, &cp, s, -0.1).is_err());
    }

    #[test]
    fn control_params_invariants() {
        let bad = ControlParams { lambda_h: 0.2, mu_c: 0.1, u_max: 1.0 };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("requires lambda_h < mu_c"), "{msg}");
        assert!(ControlParams { u_max: 1.5, ..Default::default() }.validate().is_err());
        assert!(CompetitionParams { gamma: -1e-9, ..table() }.validate().is_err());
    }

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let traj = integrate(|_| (0.0, 0.0), State::new(5.0, 7.0), (0.0, 10.0), Default::default(), &[]).unwrap();
        assert!(traj.states.iter().all(|s| *s == State::new(5.0, 7.0)));
    }

    #[test]
    fn logistic_field_matches_closed_form() {
        let (r, k, c0) = (0.6, 1.5e9, 1.0);
        let tol = IntegrationTolerance { rtol: 1e-9, atol: 1e-9 };
        let samples: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let traj = integrate(|s| (0.0, r * s.c * (1.0 - s.c / k)), State::new(0.0, c0), (0.0, 50.0), tol, &samples)
            .unwrap();
        let sampled = resample_at(&traj, &samples).unwrap();
        for (t, s) in sampled.times.iter().zip(&sampled.states) {
            let exact = logistic(c0, r, k, *t);
            assert!((s.c - exact).abs() / exact < 10.0 * tol.rtol, "t={t}");
        }
    }

    #[test]
    fn invariant_line_of_coexistence() {
        let p = CompetitionParams { gamma: 0.0, ..table() };
        let field = VectorField::uncontrolled(System::Coexistence, p);
        let tol = IntegrationTolerance::default();
        for c0 in [1e3, 7e4, 3.5e5, 6.9e5] {
            let traj = integrate(|s| field.eval(s), State::new(p.k - c0, c0), (0.0, 200.0), tol, &[]).unwrap();
            for s in &traj.states {
                assert!((s.h + s.c - p.k).abs() < tol.rtol * p.k * 10.0);
            }
        }
    }

    #[test]
    fn controlled_field_reaches_healthy_point() {
        let p = table();
        let cp = ControlParams::default();
        let field = VectorField::constant_control(p, cp, 0.7).unwrap();
        let traj = integrate(|s| field.eval(s), State::new(6.3e5, 0.7e5), (0.0, 200.0), Default::default(), &[])
            .unwrap();
        let end = traj.last().unwrap();
        let target = p.k * (1.0 - cp.lambda_h * 0.7 / p.r_h);
        assert!((end.h - target).abs() < 1e-3 * p.k);
        assert!(end.c < 1e-3 * p.k);
    }

    #[test]
    fn bad_initial_state_is_rejected() {
        assert!(integrate(|_| (0.0, 0.0), State::new(-1.0, 1.0), (0.0, 1.0), Default::default(), &[]).is_err());
        assert!(integrate(|_| (0.0, 0.0), State::new(1.0, 1.0), (1.0, 1.0), Default::default(), &[]).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let t = Trajectory { times: vec![0.0, 1.0], states: vec![State::default()], controls: None };
        assert!(t.validate().is_err());
        let t = Trajectory { times: vec![1.0, 0.0], states: vec![State::default(); 2], controls: None };
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn gamma_zero_competition_equals_coexistence(h in 0.0f64..1e6, c in 0.0f64..1e6) {
            let p = CompetitionParams { gamma: 0.0, ..table() };
            prop_assert_eq!(rhs_competition(&p, State::new(h, c)), rhs_coexistence(&p, State::new(h, c)));
        }

        #[test]
        fn quadrant_is_forward_invariant(h0 in 0.0f64..7e5, c0 in 0.0f64..7e5, u in 0.0f64..1.0) {
            let p = table();
            let field = VectorField::constant_control(p, ControlParams::default(), u).unwrap();
            let tol = IntegrationTolerance::default();
            let traj = integrate(|s| field.eval(s), State::new(h0, c0), (0.0, 50.0), tol, &[]).unwrap();
            for s in &traj.states {
                prop_assert!(s.h >= 0.0 && s.c >= 0.0);
            }
        }
    }
}
