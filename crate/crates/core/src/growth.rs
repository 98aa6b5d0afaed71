//! Closed-form single-population tumor growth laws.
//!
//! Three models of increasing realism are provided: unbounded exponential
//! growth with a constant doubling time, Gompertz growth with an implicit
//! plateau `C0 * e^A`, and Verhulst (logistic) growth with an explicit
//! carrying capacity `K`. Time is measured in days and populations are
//! real-valued cell counts.

use serde::{Deserialize, Serialize};

use crate::error::{require, require_finite, Error, Result};

/// Largest exponent accepted before an evaluation is reported as overflow.
const MAX_LN_VALUE: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthParams {
    /// Initial population at `t0` (cells).
    pub c0: f64,
    /// Reference time (days).
    pub t0: f64,
    /// Exponential doubling time (days).
    pub td: f64,
    /// Gompertz plateau exponent `A` (dimensionless).
    pub gompertz_a_cap: f64,
    /// Gompertz rate `a` (1/day).
    pub gompertz_a_rate: f64,
    /// Verhulst growth rate `r` (1/day).
    pub verhulst_r: f64,
    /// Verhulst carrying capacity `K` (cells).
    pub verhulst_k: f64,
}

impl Default for GrowthParams {
    /// Murine tumor parameters.
    fn default() -> Self {
        Self {
            c0: 1.0,
            t0: 0.0,
            td: 1.15,
            gompertz_a_cap: 21.13,
            gompertz_a_rate: 0.06,
            verhulst_r: 0.6,
            verhulst_k: 1.5e9,
        }
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c0", self.c0),
            ("t0", self.t0),
            ("td", self.td),
            ("gompertz_a_cap", self.gompertz_a_cap),
            ("gompertz_a_rate", self.gompertz_a_rate),
            ("verhulst_r", self.verhulst_r),
            ("verhulst_k", self.verhulst_k),
        ] {
            require_finite(name, v)?;
        }
        require(self.c0 > 0.0, || "requires c0 > 0".into())?;
        require(self.td > 0.0, || "requires td > 0".into())?;
        require(self.gompertz_a_cap > 0.0, || "requires gompertz_a_cap > 0".into())?;
        require(self.gompertz_a_rate > 0.0, || "requires gompertz_a_rate > 0".into())?;
        require(self.verhulst_r > 0.0, || "requires verhulst_r > 0".into())?;
        require(self.verhulst_k > 0.0, || "requires verhulst_k > 0".into())?;
        Ok(())
    }

    /// Gompertz upper bound `C0 * e^A`.
    pub fn gompertz_plateau(&self) -> f64 {
        self.c0 * self.gompertz_a_cap.exp()
    }
}

fn check_time(t: f64, origin: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("time {t} is not finite")));
    }
    if t < origin {
        return Err(Error::Domain(format!("time {t} precedes the reference time {origin}")));
    }
    Ok(())
}

/// Exponential growth `C0 * 2^((t - t0) / T_D)`.
///
/// Returns [`Error::Range`] instead of infinity once the value exceeds
/// roughly `e^700` cells.
pub fn exponential(p: &GrowthParams, t: f64) -> Result<f64> {
    check_time(t, p.t0)?;
    let exponent = std::f64::consts::LN_2 * (t - p.t0) / p.td;
    if exponent + p.c0.ln() > MAX_LN_VALUE {
        return Err(Error::Range(format!(
            "exponential growth overflows at t = {t} (ln C = {:.1})",
            exponent + p.c0.ln()
        )));
    }
    Ok(p.c0 * exponent.exp())
}

/// Gompertz growth `C0 * exp(A (1 - e^{-a (t - t0)}))`.
pub fn gompertz(p: &GrowthParams, t: f64) -> Result<f64> {
    check_time(t, p.t0)?;
    // 1 - e^{-x} via expm1 keeps precision for t close to t0
    let shape = -(-p.gompertz_a_rate * (t - p.t0)).exp_m1();
    Ok(p.c0 * (p.gompertz_a_cap * shape).exp())
}

/// Verhulst growth `C0 e^{rt} / (1 + (C0/K)(e^{rt} - 1))`, with `t0 = 0`.
pub fn verhulst(p: &GrowthParams, t: f64) -> Result<f64> {
    check_time(t, 0.0)?;
    Ok(logistic(p.c0, p.verhulst_r, p.verhulst_k, t))
}

/// Logistic solution written in terms of `e^{-rt}` so it stays finite for
/// any `t >= 0`.
pub(crate) fn logistic(c0: f64, r: f64, k: f64, t: f64) -> f64 {
    let decay = (-r * t).exp();
    c0 / (decay + (c0 / k) * (1.0 - decay))
}
