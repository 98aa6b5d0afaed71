//! Equilibria, Jacobians and linear stability of the two-population systems.
//!
//! Closed-form eigenvalues are used wherever the Jacobian at an equilibrium
//! is triangular; everything else goes through [`eigenvalues_2x2`].

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    controlled_unchecked, integrate, rhs_coexistence, rhs_competition, CompetitionParams, ControlParams,
    IntegrationTolerance, State,
};
use crate::error::Result;

/// Real or complex eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub const fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    StableSink,
    UnstableSource,
    Saddle,
    /// At least one eigenvalue with zero real part.
    NonHyperbolic,
    /// A coordinate is negative, no stability claim is made.
    NotFeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenSource {
    ClosedForm,
    Numeric,
}

/// A threshold inequality evaluated at concrete parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub expr: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Condition {
    fn less(expr: &str, lhs: f64, rhs: f64) -> Self {
        Self { expr: expr.into(), lhs, rhs, holds: lhs < rhs }
    }

    fn greater(expr: &str, lhs: f64, rhs: f64) -> Self {
        Self { expr: expr.into(), lhs, rhs, holds: lhs > rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub label: String,
    pub point: State,
    pub eigenvalues: [Eigenvalue; 2],
    pub eigen_source: EigenSource,
    pub classification: Classification,
    pub conditions: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub determinant: Option<f64>,
    /// Verdict from simulating a perturbed start, filled for non-hyperbolic points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear_verdict: Option<NonlinearVerdict>,
}

impl EquilibriumReport {
    pub fn is_feasible(&self) -> bool {
        self.classification != Classification::NotFeasible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearVerdict {
    /// The perturbed trajectory moves away from the point.
    Departs,
    /// The perturbed trajectory returns towards the point.
    Returns,
    /// The perturbation neither grows nor decays appreciably.
    Neutral,
}

pub type Matrix2 = [[f64; 2]; 2];

/// Jacobian of the controlled field at `(s, u)`.
///
/// With `u = 0` this is also the Jacobian of the competition field.
pub fn jacobian_controlled(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64) -> Matrix2 {
    let (h, c) = (s.h, s.c);
    [
        [p.r_h * (1.0 - (2.0 * h + c) / p.k) - p.gamma * c - cp.lambda_h * u, -h * (p.r_h / p.k + p.gamma)],
        [-c * p.r_c / p.k, p.r_c * (1.0 - (h + 2.0 * c) / p.k) - cp.mu_c * u],
    ]
}

/// Jacobian of the coexistence field.
pub fn jacobian_coexistence(p: &CompetitionParams, s: State) -> Matrix2 {
    let (h, c) = (s.h, s.c);
    [
        [p.r_h * (1.0 - (2.0 * h + c) / p.k_h), -p.r_h * h / p.k_h],
        [-p.r_c * c / p.k_c, p.r_c * (1.0 - (h + 2.0 * c) / p.k_c)],
    ]
}

/// Eigenvalues of a real 2x2 matrix from its trace and determinant.
///
/// Returned in ascending order of real part (then imaginary part).
pub fn eigenvalues_2x2(m: &Matrix2) -> [Eigenvalue; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    // (a - d)^2 + 4bc avoids the cancellation in tr^2 - 4 det
    let disc = (m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0];
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // larger-magnitude root first, the other from det / root
        let big = if tr >= 0.0 { 0.5 * (tr + sq) } else { 0.5 * (tr - sq) };
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (a, b) = if big <= small { (big, small) } else { (small, big) };
        [Eigenvalue::real(a), Eigenvalue::real(b)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Eigenvalue { re: 0.5 * tr, im: -im }, Eigenvalue { re: 0.5 * tr, im }]
    }
}

/// Classify a feasible equilibrium by the signs of its eigenvalues' real parts.
///
/// Real parts with magnitude at most `zero_tol` count as zero.
pub fn classify(eigs: &[Eigenvalue; 2], zero_tol: f64) -> Classification {
    let re = [eigs[0].re, eigs[1].re];
    if re.iter().any(|r| r.abs() <= zero_tol) {
        Classification::NonHyperbolic
    } else if re.iter().all(|&r| r < 0.0) {
        Classification::StableSink
    } else if re.iter().all(|&r| r > 0.0) {
        Classification::UnstableSource
    } else {
        Classification::Saddle
    }
}

fn zero_tolerance(p: &CompetitionParams) -> f64 {
    1e-12 * p.r_h.max(p.r_c)
}

fn sorted(mut e: [Eigenvalue; 2]) -> [Eigenvalue; 2] {
    if (e[1].re, e[1].im) < (e[0].re, e[0].im) {
        e.swap(0, 1);
    }
    e
}

fn report(
    label: &str,
    point: State,
    eigenvalues: [Eigenvalue; 2],
    eigen_source: EigenSource,
    conditions: Vec<Condition>,
    zero_tol: f64,
) -> EquilibriumReport {
    let feasible = point.h >= 0.0 && point.c >= 0.0 && point.h.is_finite() && point.c.is_finite();
    let classification = if feasible { classify(&eigenvalues, zero_tol) } else { Classification::NotFeasible };
    EquilibriumReport {
        label: label.into(),
        point,
        eigenvalues: sorted(eigenvalues),
        eigen_source,
        classification,
        conditions,
        determinant: None,
        nonlinear_verdict: None,
    }
}

/// Equilibria of the uncontrolled systems.
///
/// With `with_gamma == false` these are the coexistence points `(0,0)`,
/// `(K_H,0)`, `(0,K_C)`; otherwise the competition points with shared `K`.
pub fn equilibria_uncontrolled(p: &CompetitionParams, with_gamma: bool) -> Vec<EquilibriumReport> {
    let z = zero_tolerance(p);
    let r = Eigenvalue::real;
    if with_gamma {
        let k = p.k;
        vec![
            report("extinction", State::new(0.0, 0.0), [r(p.r_h), r(p.r_c)], EigenSource::ClosedForm, vec![], z),
            report(
                "healthy",
                State::new(k, 0.0),
                [r(-p.r_h), r(0.0)],
                EigenSource::ClosedForm,
                vec![],
                z,
            ),
            report(
                "tumor",
                State::new(0.0, k),
                [r(-p.r_c), r(-p.gamma * k)],
                EigenSource::ClosedForm,
                vec![],
                z,
            ),
        ]
    } else {
        vec![
            report("extinction", State::new(0.0, 0.0), [r(p.r_h), r(p.r_c)], EigenSource::ClosedForm, vec![], z),
            report(
                "healthy",
                State::new(p.k_h, 0.0),
                [r(-p.r_h), r(p.r_c * (p.k_c - p.k_h) / p.k_c)],
                EigenSource::ClosedForm,
                vec![],
                z,
            ),
            report(
                "tumor",
                State::new(0.0, p.k_c),
                [r(-p.r_c), r(p.r_h * (-p.k_c + p.k_h) / p.k_h)],
                EigenSource::ClosedForm,
                vec![],
                z,
            ),
        ]
    }
}

/// Interior equilibrium `(H^, C^)` under constant control, `None` when `gamma = 0`.
pub fn interior_point(p: &CompetitionParams, cp: &ControlParams, u: f64) -> Option<State> {
    if p.gamma == 0.0 {
        return None;
    }
    let (k, g, lam, mu) = (p.k, p.gamma, cp.lambda_h, cp.mu_c);
    let h = k - k * mu * u / p.r_c + lam * u / g - mu * p.r_h * u / (g * p.r_c);
    let c = u * (mu * p.r_h - lam * p.r_c) / (g * p.r_c);
    Some(State::new(h, c))
}

/// Equilibria of the competition model under a constant dose rate `u`.
///
/// Returns the extinction, healthy and tumor points plus the interior point
/// when `gamma > 0`. Threshold conditions are evaluated at the given
/// parameters and attached to each report.
pub fn equilibria_constant_control(p: &CompetitionParams, cp: &ControlParams, u: f64) -> Result<Vec<EquilibriumReport>> {
    cp.check_control(u)?;
    let z = zero_tolerance(p);
    let r = Eigenvalue::real;
    let (k, g, lam, mu) = (p.k, p.gamma, cp.lambda_h, cp.mu_c);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };

    let extinction = report(
        "extinction",
        State::new(0.0, 0.0),
        [r(p.r_h - lam * u), r(p.r_c - mu * u)],
        EigenSource::ClosedForm,
        vec![Condition::greater(
            "u > max(r_H/lambda, r_C/mu)",
            u,
            ratio(p.r_h, lam).max(ratio(p.r_c, mu)),
        )],
        z,
    );

    let healthy = report(
        "healthy",
        State::new(k * (1.0 - lam * u / p.r_h), 0.0),
        [r(lam * u - p.r_h), r(u * (p.r_c * lam - p.r_h * mu) / p.r_h)],
        EigenSource::ClosedForm,
        vec![
            Condition::less("u < r_H/lambda", u, ratio(p.r_h, lam)),
            Condition::less("r_C/r_H < mu/lambda", p.r_c / p.r_h, ratio(mu, lam)),
        ],
        z,
    );

    let tumor_gamma_threshold = if p.r_c - mu * u > 0.0 {
        (u / k) * ((p.r_h * mu - lam * p.r_c) / (p.r_c - mu * u))
    } else {
        f64::INFINITY
    };
    let tumor = report(
        "tumor",
        State::new(0.0, k * (1.0 - mu * u / p.r_c)),
        [r(mu * u - p.r_c), r(u * (p.r_h * mu - lam * p.r_c) / p.r_c - g * k * (1.0 - mu * u / p.r_c))],
        EigenSource::ClosedForm,
        vec![
            Condition::less("u < r_C/mu", u, ratio(p.r_c, mu)),
            Condition::greater("gamma > (u/K)(r_H mu - lambda r_C)/(r_C - mu u)", g, tumor_gamma_threshold),
        ],
        z,
    );

    let mut out = vec![extinction, healthy, tumor];
    if let Some(point) = interior_point(p, cp, u) {
        let jac = jacobian_controlled(p, cp, point, u);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let mut rep = report(
            "interior",
            point,
            eigenvalues_2x2(&jac),
            EigenSource::Numeric,
            vec![Condition::less("det J(H^, C^) < 0", det, 0.0)],
            z,
        );
        rep.determinant = Some(det);
        out.push(rep);
    }
    Ok(out)
}

/// Numerically evaluated eigenvalues at an equilibrium, for cross-checks.
pub fn numeric_eigenvalues(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64, with_gamma: bool) -> [Eigenvalue; 2] {
    let jac = if with_gamma { jacobian_controlled(p, cp, s, u) } else { jacobian_coexistence(p, s) };
    eigenvalues_2x2(&jac)
}

/// Probe a (typically non-hyperbolic) equilibrium by simulating from a
/// perturbed start inside the nonnegative quadrant.
///
/// The perturbation has size `frac * capacity`; the verdict compares the
/// distance at `horizon` against the initial distance.
pub fn probe_nonlinear<F>(rhs: F, point: State, capacity: f64, frac: f64, horizon: f64) -> Result<NonlinearVerdict>
where
    F: Fn(State) -> (f64, f64),
{
    let d = frac * capacity;
    let start = State::new(
        if point.h >= d { point.h - d } else { point.h + d },
        if point.c >= d { point.c - d } else { point.c + d },
    );
    let tol = IntegrationTolerance { rtol: 1e-9, atol: 1e-6 };
    let traj = integrate(rhs, start, (0.0, horizon), tol, &[])?;
    let end = traj.last().unwrap_or(start);
    let dist = |s: State| (s.h - point.h).hypot(s.c - point.c);
    let (d0, d1) = (dist(start), dist(end));
    Ok(if d1 > 10.0 * d0 {
        NonlinearVerdict::Departs
    } else if d1 < 0.1 * d0 {
        NonlinearVerdict::Returns
    } else {
        NonlinearVerdict::Neutral
    })
}

/// Attach simulation verdicts to the non-hyperbolic points of an
/// uncontrolled report list.
pub fn annotate_nonlinear(p: &CompetitionParams, with_gamma: bool, reports: &mut [EquilibriumReport], horizon: f64) -> Result<()> {
    for rep in reports.iter_mut().filter(|r| r.classification == Classification::NonHyperbolic) {
        let verdict = if with_gamma {
            probe_nonlinear(|s| rhs_competition(p, s), rep.point, p.k, 0.01, horizon)?
        } else {
            probe_nonlinear(|s| rhs_coexistence(p, s), rep.point, p.k_h.max(p.k_c), 0.01, horizon)?
        };
        rep.nonlinear_verdict = Some(verdict);
    }
    Ok(())
}

/// Residual of the controlled field at a point (cells/day).
pub fn residual(p: &CompetitionParams, cp: &ControlParams, s: State, u: f64) -> (f64, f64) {
    controlled_unchecked(p, cp, s, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> (CompetitionParams, ControlParams) {
        (CompetitionParams::default(), ControlParams::default())
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn origin_jacobian_is_diagonal_rates() {
        let (p, cp) = table();
        let j = jacobian_controlled(&p, &cp, State::default(), 0.0);
        assert_eq!(j, [[p.r_h, 0.0], [0.0, p.r_c]]);
    }

    #[test]
    fn tumor_point_eigenvalues() {
        let (p, cp) = table();
        let e = eigenvalues_2x2(&jacobian_controlled(&p, &cp, State::new(0.0, p.k), 0.0));
        assert!(close(e[0].re, -0.6, 1e-12));
        assert!(close(e[1].re, -0.0385, 1e-12), "{:?}", e);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let (p, cp) = table();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = State::new(rng.random_range(1e3..7e5), rng.random_range(1e3..7e5));
            let u = rng.random_range(0.0..1.0);
            let j = jacobian_controlled(&p, &cp, s, u);
            let f = |s: State| controlled_unchecked(&p, &cp, s, u);
            let dh = 1e-3 * s.h;
            let dc = 1e-3 * s.c;
            let (a, b) = (f(State::new(s.h + dh, s.c)), f(State::new(s.h - dh, s.c)));
            let col_h = [(a.0 - b.0) / (2.0 * dh), (a.1 - b.1) / (2.0 * dh)];
            let (a, b) = (f(State::new(s.h, s.c + dc)), f(State::new(s.h, s.c - dc)));
            let col_c = [(a.0 - b.0) / (2.0 * dc), (a.1 - b.1) / (2.0 * dc)];
            for (fd, exact) in [(col_h[0], j[0][0]), (col_h[1], j[1][0]), (col_c[0], j[0][1]), (col_c[1], j[1][1])] {
                // the fields are quadratic, so central differences are exact up to rounding
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(p.r_h), "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn eigen_solver_handles_complex_pairs() {
        let e = eigenvalues_2x2(&[[0.0, -1.0], [1.0, 0.0]]);
        assert_eq!(e[0], Eigenvalue { re: 0.0, im: -1.0 });
        assert_eq!(e[1], Eigenvalue { re: 0.0, im: 1.0 });
        assert_eq!(classify(&e, 1e-12), Classification::NonHyperbolic);
        let e = eigenvalues_2x2(&[[-1.0, -5.0], [5.0, -1.0]]);
        assert_eq!(classify(&e, 1e-12), Classification::StableSink);
    }

    #[test]
    fn constant_control_table_values() {
        let (p, cp) = table();
        let reps = equilibria_constant_control(&p, &cp, 0.7).unwrap();
        let healthy = &reps[1];
        assert!(close(healthy.point.h, 695_916.666_666_666_7, 1e-12));
        assert!(close(healthy.eigenvalues[0].re, -2.9825, 1e-12));
        let l2 = 0.7 * (0.6 * 0.025 - 3.0 * 0.189) / 3.0;
        assert!(close(healthy.eigenvalues[1].re, l2, 1e-12));
        assert!((l2 - (-0.1288)).abs() < 1e-9);
        assert_eq!(healthy.classification, Classification::StableSink);
        assert!(healthy.conditions.iter().all(|c| c.holds));

        let tumor = &reps[2];
        assert!(close(tumor.point.c, 545_650.0, 1e-12));
        assert!(tumor.conditions[0].holds);
        assert!(!tumor.conditions[1].holds);
        assert!((tumor.conditions[1].rhs - 1.180e-6).abs() < 1e-9, "{}", tumor.conditions[1].rhs);
        assert_eq!(tumor.classification, Classification::Saddle);

        let origin = &reps[0];
        assert!(close(origin.conditions[0].rhs, 120.0, 1e-12));
        assert!(!origin.conditions[0].holds);

        let interior = &reps[3];
        assert!(close(interior.point.c, 0.7 * 0.552 / 3.3e-8, 1e-12), "{}", interior.point.c);
        assert!(interior.point.h < 0.0);
        assert_eq!(interior.classification, Classification::NotFeasible);
        // det J = -gamma r_C H C / K, positive once H < 0
        assert!(interior.determinant.unwrap() > 0.0);

        // small doses keep the interior point in the quadrant, where it is a saddle
        let low = &equilibria_constant_control(&p, &cp, 0.01).unwrap()[3];
        assert!(low.point.h > 0.0 && low.point.c > 0.0);
        assert!(low.determinant.unwrap() < 0.0);
        assert!(low.conditions[0].holds);
        assert_eq!(low.classification, Classification::Saddle);
    }

    #[test]
    fn zero_control_reduces_to_competition_points() {
        let (p, cp) = table();
        let reps = equilibria_constant_control(&p, &cp, 0.0).unwrap();
        let unc = equilibria_uncontrolled(&p, true);
        for i in 0..3 {
            assert_eq!(reps[i].point, unc[i].point);
            for j in 0..2 {
                assert!((reps[i].eigenvalues[j].re - unc[i].eigenvalues[j].re).abs() < 1e-15);
            }
        }
        let interior = reps[3].point;
        assert_eq!((interior.h, interior.c), (p.k, 0.0));
    }

    #[test]
    fn gamma_zero_has_no_interior_point() {
        let (p, cp) = table();
        let p = CompetitionParams { gamma: 0.0, ..p };
        assert_eq!(equilibria_constant_control(&p, &cp, 0.5).unwrap().len(), 3);
    }

    #[test]
    fn coexistence_points_are_non_hyperbolic() {
        let (p, _) = table();
        let mut reps = equilibria_uncontrolled(&p, false);
        assert_eq!(reps[0].classification, Classification::UnstableSource);
        assert_eq!(reps[1].classification, Classification::NonHyperbolic);
        assert_eq!(reps[1].eigenvalues[1].re, 0.0);
        assert_eq!(reps[2].classification, Classification::NonHyperbolic);
        annotate_nonlinear(&p, false, &mut reps, 50.0).unwrap();
        // a line of equilibria: perturbations neither grow nor decay much
        assert_eq!(reps[1].nonlinear_verdict, Some(NonlinearVerdict::Neutral));
    }

    #[test]
    fn competition_points() {
        let (p, _) = table();
        let mut reps = equilibria_uncontrolled(&p, true);
        assert_eq!(reps[2].classification, Classification::StableSink);
        assert!(close(reps[2].eigenvalues[0].re, -0.6, 1e-15));
        assert!(close(reps[2].eigenvalues[1].re, -0.0385, 1e-12));
        assert_eq!(reps[1].classification, Classification::NonHyperbolic);
        // the centre direction drifts slowly; escape takes roughly 1.3e4 days
        annotate_nonlinear(&p, true, &mut reps, 20_000.0).unwrap();
        assert_eq!(reps[1].nonlinear_verdict, Some(NonlinearVerdict::Departs));
    }

    #[test]
    fn small_gamma_limit_is_continuous() {
        let (p, _) = table();
        let base = equilibria_uncontrolled(&CompetitionParams { k_h: p.k, k_c: p.k, ..p }, false);
        for g in [1e-8, 1e-10, 1e-14] {
            let reps = equilibria_uncontrolled(&CompetitionParams { gamma: g, ..p }, true);
            for (a, b) in reps.iter().zip(&base) {
                for j in 0..2 {
                    assert!((a.eigenvalues[j].re - b.eigenvalues[j].re).abs() <= g * p.k * 1.0001);
                }
            }
        }
    }

    #[test]
    fn tumor_coordinate_vanishes_at_threshold() {
        let (p, cp) = table();
        let u_star = p.r_c / cp.mu_c;
        // bound lifted above 1 only to scan past the threshold
        let cp = ControlParams { u_max: u_star * (1.0 + 1e-12), ..cp };
        let n = 50;
        let mut prev = f64::INFINITY;
        for i in 0..=n {
            let u = (u_star * i as f64 / n as f64).min(u_star);
            let c = equilibria_constant_control(&p, &cp, u).unwrap()[2].point.c;
            assert!(c < prev);
            if i > 0 {
                let slope = (c - prev) / (u_star / n as f64);
                assert!(close(slope, -p.k * cp.mu_c / p.r_c, 1e-6));
            }
            prev = c;
        }
        assert!(prev.abs() <= 1e-9 * p.k);
    }
}
