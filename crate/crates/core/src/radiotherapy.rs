//! Linear-quadratic cell survival and a piecewise fractionation simulator.
//!
//! Outside treatment the populations move through two growth regimes. In
//! the free phase both grow logistically against a shared capacity. Once
//! the niche is nearly full the competition phase latches: the tumor
//! follows a slower Verhulst law and healthy tissue fills the remainder,
//! `H = K - C`. During a session growth is suspended and both populations
//! lose cells according to the LQ law with the dose delivered so far.

use serde::{Deserialize, Serialize};

use crate::dynamics::{State, Trajectory};
use crate::error::{require, require_finite, Error, Result};
use crate::ode::rk4_step;

/// Radiosensitivity of one cell population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqParams {
    /// Linear inactivation coefficient (1/Gy).
    pub alpha: f64,
    /// Quadratic inactivation coefficient (1/Gy^2).
    pub beta: f64,
}

impl LqParams {
    pub const CANCER: Self = Self { alpha: 5e-3, beta: 2e-2 };
    pub const HEALTHY: Self = Self { alpha: 6.25e-4, beta: 2.5e-3 };

    pub fn validate(&self) -> Result<()> {
        require_finite("alpha", self.alpha)?;
        require_finite("beta", self.beta)?;
        require(self.alpha >= 0.0 && self.beta >= 0.0, || "requires alpha, beta >= 0".into())?;
        require(self.alpha > 0.0 || self.beta > 0.0, || "alpha and beta cannot both be zero".into())
    }

    /// Log-kill `alpha d + beta d^2` for a single dose.
    pub fn log_kill(&self, dose: f64) -> f64 {
        self.alpha * dose + self.beta * dose * dose
    }

    /// `alpha / beta` in Gy, or `None` when `beta = 0`.
    pub fn alpha_beta_ratio(&self) -> Option<f64> {
        (self.beta > 0.0).then(|| self.alpha / self.beta)
    }
}

/// Surviving cells after an acute dose: `n0 e^{-(alpha d + beta d^2)}`.
pub fn lq_survival(p: &LqParams, n0: f64, dose: f64) -> Result<f64> {
    if !(n0 >= 0.0 && n0.is_finite()) {
        return Err(Error::Domain(format!("population {n0} must be finite and nonnegative")));
    }
    if !(dose >= 0.0 && dose.is_finite()) {
        return Err(Error::Domain(format!("dose {dose} must be finite and nonnegative")));
    }
    Ok(n0 * (-p.log_kill(dose)).exp())
}

/// Treatment schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FractionationPlan {
    /// Session start times (days).
    pub session_start_times: Vec<f64>,
    /// Session length (days).
    pub session_duration: f64,
    /// Dose rate inside a session (Gy/day).
    pub dose_rate: f64,
    /// Cure threshold (cells); `None` disables truncation.
    pub eradication_threshold: Option<f64>,
    /// Optional per-session doses (Gy) replacing `dose_rate * session_duration`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_doses: Option<Vec<f64>>,
}

impl Default for FractionationPlan {
    /// Sixteen 0.2-day sessions every 20 days from day 100, `R = 1`,
    /// threshold `1e6` cells.
    fn default() -> Self {
        Self {
            session_start_times: (0..16).map(|i| 100.0 + 20.0 * i as f64).collect(),
            session_duration: 0.2,
            dose_rate: 1.0,
            eradication_threshold: Some(1e6),
            session_doses: None,
        }
    }
}

impl FractionationPlan {
    /// Same schedule with every session delivering `dose` Gy.
    pub fn with_uniform_dose(mut self, dose: f64) -> Self {
        self.session_doses = Some(vec![dose; self.session_start_times.len()]);
        self
    }

    pub fn without_threshold(mut self) -> Self {
        self.eradication_threshold = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schedule(m));
        if !(self.session_duration > 0.0 && self.session_duration.is_finite()) {
            return bad("session_duration must be positive".into());
        }
        if !(self.dose_rate > 0.0 && self.dose_rate.is_finite()) {
            return bad("dose_rate must be positive".into());
        }
        if let Some(eps) = self.eradication_threshold {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad("eradication_threshold must be positive".into());
            }
        }
        if self.session_start_times.iter().any(|t| !t.is_finite()) {
            return bad("session start times must be finite".into());
        }
        for w in self.session_start_times.windows(2) {
            if w[1] - w[0] < self.session_duration {
                return bad(format!("sessions at {} and {} overlap", w[0], w[1]));
            }
        }
        if let Some(doses) = &self.session_doses {
            if doses.len() != self.session_start_times.len() {
                return bad(format!(
                    "{} session doses for {} sessions",
                    doses.len(),
                    self.session_start_times.len()
                ));
            }
            if doses.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                return bad("session doses must be finite and nonnegative".into());
            }
        }
        Ok(())
    }

    /// Dose delivered in session `i` (Gy).
    pub fn session_dose(&self, i: usize) -> f64 {
        match &self.session_doses {
            Some(d) => d[i],
            None => self.dose_rate * self.session_duration,
        }
    }

    /// End of the last session, if any.
    pub fn last_session_end(&self) -> Option<f64> {
        self.session_start_times.last().map(|t| t + self.session_duration)
    }
}

/// Growth rates and initial state of the fractionation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiecewiseGrowthParams {
    /// Free-phase cancer growth rate (1/day).
    pub r_free_c: f64,
    /// Competition-phase cancer growth rate (1/day).
    pub r_comp_c: f64,
    /// Free-phase healthy growth rate (1/day).
    pub r_free_h: f64,
    /// Carrying capacity (cells).
    pub k: f64,
    /// Initial cancer population (cells).
    pub c0: f64,
    /// Initial healthy population (cells).
    pub h0: f64,
    /// Fraction of `k` at which the competition phase starts.
    pub competition_trigger_fraction: f64,
    /// Keep the growth terms active inside sessions.
    pub growth_during_sessions: bool,
}

impl Default for PiecewiseGrowthParams {
    fn default() -> Self {
        Self {
            r_free_c: 0.13,
            r_comp_c: 0.05,
            r_free_h: 0.16,
            k: 1e9,
            c0: 1e6,
            h0: 5e8,
            competition_trigger_fraction: 0.95,
            growth_during_sessions: false,
        }
    }
}

impl PiecewiseGrowthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_free_c", self.r_free_c),
            ("r_comp_c", self.r_comp_c),
            ("r_free_h", self.r_free_h),
            ("k", self.k),
            ("c0", self.c0),
            ("h0", self.h0),
            ("competition_trigger_fraction", self.competition_trigger_fraction),
        ] {
            require_finite(name, v)?;
        }
        require(
            self.r_free_h > self.r_free_c && self.r_free_c > self.r_comp_c && self.r_comp_c > 0.0,
            || "requires r_free_h > r_free_c > r_comp_c > 0".into(),
        )?;
        require(self.c0 > 0.0 && self.h0 > 0.0, || "requires c0 > 0 and h0 > 0".into())?;
        require(self.c0 + self.h0 <= self.k, || "requires c0 + h0 <= k".into())?;
        let f = self.competition_trigger_fraction;
        require(f > 0.0 && f <= 1.0, || "competition_trigger_fraction must lie in (0, 1]".into())
    }
}

/// Growth regime in force at a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Free,
    Competition,
    Cured,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Free => "free",
            Regime::Competition => "competition",
            Regime::Cured => "cured",
        }
    }
}

/// Trajectory of the fractionation model with per-sample annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionatedRun {
    pub trajectory: Trajectory,
    pub regimes: Vec<Regime>,
    pub in_session: Vec<bool>,
    /// Time at which the tumor was truncated to zero, if it was.
    pub cure_time: Option<f64>,
}

impl FractionatedRun {
    /// Sample at the first grid time `>= t`.
    pub fn state_at(&self, t: f64) -> Option<State> {
        let i = self.trajectory.times.partition_point(|&s| s < t);
        self.trajectory.states.get(i).copied()
    }

    /// Linear interpolation between the samples bracketing `t`.
    pub fn sample(&self, t: f64) -> Option<State> {
        let (times, states) = (&self.trajectory.times, &self.trajectory.states);
        let i = times.partition_point(|&s| s < t);
        if i == 0 {
            return (times.first() == Some(&t)).then(|| states[0]);
        }
        let (t0, t1) = (times[i - 1], *times.get(i)?);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (states[i - 1], states[i]);
        Some(State::new(a.h + w * (b.h - a.h), a.c + w * (b.c - a.c)))
    }

    pub fn last(&self) -> State {
        *self.trajectory.states.last().expect("runs always hold the initial sample")
    }
}

/// Segment of the time axis with uniform treatment.
struct Segment {
    start: f64,
    end: f64,
    /// Dose rate when inside a session.
    session_rate: Option<f64>,
}

fn segments(plan: &FractionationPlan, t_end: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut cursor = 0.0;
    for (i, &start) in plan.session_start_times.iter().enumerate() {
        let end = start + plan.session_duration;
        if start > cursor {
            out.push(Segment { start: cursor, end: start, session_rate: None });
        }
        out.push(Segment {
            start,
            end,
            session_rate: Some(plan.session_dose(i) / plan.session_duration),
        });
        cursor = end;
    }
    if t_end > cursor {
        out.push(Segment { start: cursor, end: t_end, session_rate: None });
    }
    out
}

/// Simulate the piecewise growth / LQ attrition model on `[0, t_end]`.
///
/// Session boundaries are always grid nodes; each segment is split into
/// equal steps no longer than `dt`.
pub fn simulate_fractionated(
    gp: &PiecewiseGrowthParams,
    lq_c: &LqParams,
    lq_h: &LqParams,
    plan: &FractionationPlan,
    t_end: f64,
    dt: f64,
) -> Result<FractionatedRun> {
    gp.validate()?;
    lq_c.validate()?;
    lq_h.validate()?;
    plan.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    if !plan.session_start_times.is_empty() && dt > plan.session_duration {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} exceeds the session duration {}",
            plan.session_duration
        )));
    }
    if plan.session_start_times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Schedule("sessions must start at t >= 0".into()));
    }
    let last_end = plan.last_session_end().unwrap_or(0.0);
    if !(t_end > last_end && t_end.is_finite()) {
        return Err(Error::Schedule(format!("t_end = {t_end} must exceed the last session end {last_end}")));
    }

    let k = gp.k;
    let trigger = gp.competition_trigger_fraction * k;
    let free_rhs = |y: &[f64; 2]| {
        let crowd = 1.0 - (y[0] + y[1]) / k;
        [gp.r_free_h * y[0] * crowd, gp.r_free_c * y[1] * crowd]
    };
    let comp_rhs = |y: &[f64; 1]| [gp.r_comp_c * y[0] * (1.0 - y[0] / k)];
    let cured_rhs = |y: &[f64; 1]| [gp.r_free_h * y[0] * (1.0 - y[0] / k)];

    let mut s = State::new(gp.h0, gp.c0);
    let mut regime = if gp.h0 + gp.c0 >= trigger { Regime::Competition } else { Regime::Free };
    if regime == Regime::Competition {
        s.h = k - s.c;
    }
    let mut run = FractionatedRun {
        trajectory: Trajectory { times: vec![0.0], states: vec![s], controls: None },
        regimes: vec![regime],
        in_session: vec![false],
        cure_time: None,
    };

    let grow = |s: State, regime: Regime, h: f64| -> State {
        match regime {
            Regime::Free => {
                let y = rk4_step(&free_rhs, &[s.h, s.c], h);
                State::new(y[0], y[1])
            }
            Regime::Competition => {
                let c = rk4_step(&comp_rhs, &[s.c], h)[0];
                State::new(k - c, c)
            }
            Regime::Cured => State::new(rk4_step(&cured_rhs, &[s.h], h)[0], 0.0),
        }
    };

    for seg in segments(plan, t_end) {
        let n = ((seg.end - seg.start) / dt).ceil().max(1.0) as usize;
        let h = (seg.end - seg.start) / n as f64;
        for j in 1..=n {
            let t = if j == n { seg.end } else { seg.start + j as f64 * h };
            if let Some(rate) = seg.session_rate {
                if gp.growth_during_sessions {
                    s = grow(s, regime, h);
                }
                // dose delivered so far in this session: before and after the step
                let (d0, d1) = (rate * (j - 1) as f64 * h, rate * (t - seg.start));
                let attenuate = |p: &LqParams| (-(p.log_kill(d1) - p.log_kill(d0))).exp();
                s = State::new(s.h * attenuate(lq_h), s.c * attenuate(lq_c));
            } else {
                s = grow(s, regime, h);
                if regime == Regime::Free && s.h + s.c >= trigger {
                    regime = Regime::Competition;
                    s.h = k - s.c;
                }
            }
            if regime != Regime::Cured {
                if let Some(eps) = plan.eradication_threshold {
                    if t >= last_end && s.c < eps {
                        regime = Regime::Cured;
                        s.c = 0.0;
                        run.cure_time = Some(t);
                    }
                }
            }
            if !(s.h.is_finite() && s.c.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            s = State::new(s.h.max(0.0), s.c.max(0.0));
            run.trajectory.times.push(t);
            run.trajectory.states.push(s);
            run.regimes.push(regime);
            run.in_session.push(seg.session_rate.is_some());
        }
    }
    Ok(run)
}
