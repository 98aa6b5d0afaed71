//! Accumulated-dose comparison between a constant and an optimised protocol.

use serde::{Deserialize, Serialize};

use super::OcpSolution;
use crate::error::{Error, Result};

/// One constant-intensity piece of a protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSegment {
    pub start: f64,
    pub end: f64,
    pub u: f64,
    pub dose: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDose {
    pub label: String,
    pub h0: f64,
    pub c0: f64,
    pub constant_total: f64,
    pub optimal_total: f64,
    pub constant_segments: Vec<DoseSegment>,
    pub optimal_segments: Vec<DoseSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseReport {
    pub t_f: f64,
    pub constant_u: f64,
    pub scenarios: Vec<ScenarioDose>,
}

/// Compare each optimal solution with the constant protocol `constant_u`
/// on the same control grid.
pub fn dose_report(solutions: &[(String, &OcpSolution)], constant_u: f64) -> Result<DoseReport> {
    let Some((_, first)) = solutions.first() else {
        return Err(Error::EmptyGrid("dose report needs at least one solution".into()));
    };
    if !(constant_u >= 0.0 && constant_u.is_finite()) {
        return Err(Error::InvalidParameter(format!("constant dose rate {constant_u} must be nonnegative")));
    }
    let t_f = first.control.horizon();
    let mut scenarios = Vec::with_capacity(solutions.len());
    for (label, sol) in solutions {
        let found = sol.control.horizon();
        if (found - t_f).abs() > 1e-9 * t_f.abs().max(1.0) {
            return Err(Error::HorizonMismatch { expected: t_f, found });
        }
        let segments = |rate: Option<f64>| -> Vec<DoseSegment> {
            sol.control
                .intervals()
                .map(|(start, end, u)| {
                    let u = rate.unwrap_or(u);
                    DoseSegment { start, end, u, dose: u * (end - start) }
                })
                .collect()
        };
        let start = sol.trajectory.states[0];
        scenarios.push(ScenarioDose {
            label: label.clone(),
            h0: start.h,
            c0: start.c,
            constant_total: constant_u * (t_f - sol.control.grid[0]),
            optimal_total: sol.accumulated_dose,
            constant_segments: segments(Some(constant_u)),
            optimal_segments: segments(None),
        });
    }
    Ok(DoseReport { t_f, constant_u, scenarios })
}

impl DoseReport {
    /// Rows `scenario, protocol, interval_start, interval_end, u_value,
    /// interval_dose, total_dose`.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &'static str, DoseSegment, f64)> + '_ {
        self.scenarios.iter().flat_map(|s| {
            let constant = s.constant_segments.iter().map(move |seg| (s.label.as_str(), "constant", *seg, s.constant_total));
            let optimal = s.optimal_segments.iter().map(move |seg| (s.label.as_str(), "optimal", *seg, s.optimal_total));
            constant.chain(optimal)
        })
    }
}
