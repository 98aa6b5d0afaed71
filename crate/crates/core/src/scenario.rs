//! Scenario orchestration: dispatch a validated configuration to the
//! models and emit its files.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    CompetitionScenario, ConstantControlScenario, DoseReportScenario, EquilibriaScenario, FractionatedScenario,
    GrowthScenario, Kind, OcpScenario, Parameters, PortraitGrid, ScenarioConfig, SolverKind,
};
use crate::dynamics::{integrate, resample_at, IntegrationTolerance, State, System, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::growth::{exponential, gompertz, verhulst};
use crate::ocp::{
    cost, dose_report, simulate_control, solve_direct, solve_fbsm, DirectOptions, FbsmOptions, OcpSetup, OcpSolution,
    PiecewiseControl,
};
use crate::output::{Cell, CsvTable, OutputSink};
use crate::radiotherapy::simulate_fractionated;
use crate::stability::{annotate_nonlinear, equilibria_constant_control, equilibria_uncontrolled, EquilibriumReport};

/// Environment variable capping the worker threads of batch sweeps.
pub const THREADS_ENV: &str = "ONCO_CONTROL_THREADS";

/// Outcome of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub kind: Kind,
    /// One-line human-readable summary.
    pub summary: String,
    pub written: Vec<PathBuf>,
    /// False when an iterative solver stopped before meeting its tolerance.
    pub converged: bool,
}

/// Run a validated scenario and write its outputs under `cfg.output.dir`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut sink = OutputSink::new(&cfg.output.dir, cfg.output.csv, cfg.output.json);
    let pool = thread_pool()?;
    let (summary, converged) = pool.install(|| match &cfg.parameters {
        Parameters::Growth(p) => run_growth(p, &mut sink).map(|s| (s, true)),
        Parameters::Fractionated(p) => run_fractionated(p, &mut sink).map(|s| (s, true)),
        Parameters::Competition(p) => run_competition(p, cfg.seed, &mut sink).map(|s| (s, true)),
        Parameters::Equilibria(p) => run_equilibria(p, &mut sink).map(|s| (s, true)),
        Parameters::ConstantControl(p) => run_constant_control(p, cfg.seed, &mut sink).map(|s| (s, true)),
        Parameters::Ocp(p) => run_ocp(p, &mut sink),
        Parameters::DoseReport(p) => run_dose_report(p, &mut sink),
    })?;
    Ok(RunReport { kind: cfg.kind(), summary, written: sink.written().to_vec(), converged })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Uniform nodes from `start` to `end` with spacing at most `dt`; the last
/// node is exactly `end`.
pub fn sample_times(start: f64, end: f64, dt: f64) -> Vec<f64> {
    let n = (((end - start) / dt) - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|i| if i == n { end } else { start + i as f64 * dt }).collect()
}

/// Vector field sampled on a rectangular grid, rows ordered by `H` then `C`.
pub fn phase_portrait(field: &VectorField, grid: &PortraitGrid) -> Result<Vec<(State, (f64, f64))>> {
    if grid.h_points == 0 || grid.c_points == 0 {
        return Err(Error::EmptyGrid(format!("phase portrait grid is {} x {}", grid.h_points, grid.c_points)));
    }
    let hs = PortraitGrid::axis(grid.h_min, grid.h_max, grid.h_points);
    let cs = PortraitGrid::axis(grid.c_min, grid.c_max, grid.c_points);
    Ok(hs
        .iter()
        .flat_map(|&h| cs.iter().map(move |&c| State::new(h, c)))
        .map(|s| (s, field.eval(s)))
        .collect())
}

/// Listed initial conditions followed by `random` seeded draws from
/// `[0, capacity] x (0, capacity]`.
pub fn initial_conditions(listed: &[State], random: usize, capacity: f64, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = (0..random).map(|_| {
        let h = capacity * rng.random::<f64>();
        let c = capacity * (1.0 - rng.random::<f64>());
        State::new(h, c)
    });
    listed.iter().copied().chain(drawn.collect::<Vec<_>>()).collect()
}

/// Integrate `field` from every start and sample on `times`.
pub fn simulate_batch(
    field: &VectorField,
    starts: &[State],
    times: &[f64],
    tol: IntegrationTolerance,
) -> Result<Vec<Trajectory>> {
    let t_end = *times.last().ok_or_else(|| Error::EmptyGrid("no sample times".into()))?;
    starts
        .par_iter()
        .map(|&s0| {
            let traj = integrate(|s| field.eval(s), s0, (times[0], t_end), tol, times)?;
            resample_at(&traj, times)
        })
        .collect()
}

fn run_growth(p: &GrowthScenario, sink: &mut OutputSink) -> Result<String> {
    let params = p.params();
    let mut table = CsvTable::new(&["t (days)", "exponential (cells)", "gompertz (cells)", "verhulst (cells)"]);
    let mut last = (0.0, 0.0, 0.0);
    for t in sample_times(p.t0, p.t_end, p.dt) {
        last = (exponential(&params, t)?, gompertz(&params, t)?, verhulst(&params, t)?);
        table.push(vec![t.into(), last.0.into(), last.1.into(), last.2.into()])?;
    }
    sink.csv("growth.csv", &table)?;
    Ok(format!(
        "growth: {} samples, at t = {}: exponential {:.6e}, gompertz {:.6e}, verhulst {:.6e}",
        table.rows(),
        p.t_end,
        last.0,
        last.1,
        last.2
    ))
}

#[derive(Serialize)]
struct FractionatedSummary {
    final_state: State,
    cure_time: Option<f64>,
    sessions: usize,
    total_dose: f64,
    samples: usize,
}

fn run_fractionated(p: &FractionatedScenario, sink: &mut OutputSink) -> Result<String> {
    let run = simulate_fractionated(&p.growth, &p.lq_cancer, &p.lq_healthy, &p.plan, p.t_end, p.dt)?;
    let mut table = CsvTable::new(&["t (days)", "H (cells)", "C (cells)", "regime", "in_session"]);
    for (i, (&t, s)) in run.trajectory.times.iter().zip(&run.trajectory.states).enumerate() {
        table.push(vec![t.into(), s.h.into(), s.c.into(), run.regimes[i].as_str().into(), run.in_session[i].into()])?;
    }
    sink.csv("fractionated.csv", &table)?;
    let sessions = p.plan.session_start_times.len();
    let summary = FractionatedSummary {
        final_state: run.last(),
        cure_time: run.cure_time,
        sessions,
        total_dose: (0..sessions).map(|i| p.plan.session_dose(i)).sum(),
        samples: table.rows(),
    };
    sink.json("fractionated_summary.json", &summary)?;
    let cure = run.cure_time.map_or("no cure".to_string(), |t| format!("cured at t = {t}"));
    Ok(format!(
        "fractionated: {sessions} sessions, H({}) = {:.6e}, C({}) = {:.6e}, {cure}",
        p.t_end, summary.final_state.h, p.t_end, summary.final_state.c
    ))
}

#[derive(Serialize)]
struct RunEnds {
    run: usize,
    initial: State,
    r#final: State,
}

#[derive(Serialize)]
struct BatchSummary<'a> {
    system: System,
    u: Option<f64>,
    t_end: f64,
    runs: &'a [RunEnds],
}

struct Batch<'a> {
    field: VectorField,
    starts: Vec<State>,
    t_end: f64,
    dt: f64,
    tolerance: IntegrationTolerance,
    portrait: Option<&'a PortraitGrid>,
}

fn run_batch(batch: Batch<'_>, sink: &mut OutputSink) -> Result<Vec<RunEnds>> {
    let controlled = batch.field.system == System::Controlled;
    let times = sample_times(0.0, batch.t_end, batch.dt);
    let trajectories = simulate_batch(&batch.field, &batch.starts, &times, batch.tolerance)?;

    let mut header = vec!["run", "t (days)", "H (cells)", "C (cells)"];
    if controlled {
        header.push("u (1)");
    }
    let mut table = CsvTable::new(&header);
    for (run, traj) in trajectories.iter().enumerate() {
        for (&t, s) in traj.times.iter().zip(&traj.states) {
            let mut row: Vec<Cell> = vec![run.into(), t.into(), s.h.into(), s.c.into()];
            if controlled {
                row.push(batch.field.u.into());
            }
            table.push(row)?;
        }
    }
    sink.csv("trajectories.csv", &table)?;

    if let Some(grid) = batch.portrait {
        let mut table = CsvTable::new(&["H (cells)", "C (cells)", "dH/dt (cells/day)", "dC/dt (cells/day)"]);
        for (s, (dh, dc)) in phase_portrait(&batch.field, grid)? {
            table.push(vec![s.h.into(), s.c.into(), dh.into(), dc.into()])?;
        }
        sink.csv("phase_portrait.csv", &table)?;
    }

    let ends: Vec<RunEnds> = trajectories
        .iter()
        .enumerate()
        .map(|(run, traj)| RunEnds { run, initial: traj.states[0], r#final: *traj.states.last().expect("nonempty") })
        .collect();
    let summary = BatchSummary {
        system: batch.field.system,
        u: controlled.then_some(batch.field.u),
        t_end: batch.t_end,
        runs: &ends,
    };
    sink.json("summary.json", &summary)?;
    Ok(ends)
}

fn describe_ends(ends: &[RunEnds], t_end: f64) -> String {
    let first = &ends[0].r#final;
    format!("{} runs, run 0 at t = {t_end}: H = {:.6e}, C = {:.6e}", ends.len(), first.h, first.c)
}

fn run_competition(p: &CompetitionScenario, seed: u64, sink: &mut OutputSink) -> Result<String> {
    let field = VectorField::uncontrolled(p.system, p.params);
    let starts = initial_conditions(&p.initial_conditions, p.random_initial_conditions, field.capacity(), seed);
    let batch =
        Batch { field, starts, t_end: p.t_end, dt: p.dt, tolerance: p.tolerance, portrait: p.phase_portrait.as_ref() };
    let ends = run_batch(batch, sink)?;
    Ok(format!("competition: {}", describe_ends(&ends, p.t_end)))
}

fn run_constant_control(p: &ConstantControlScenario, seed: u64, sink: &mut OutputSink) -> Result<String> {
    let field = VectorField::constant_control(p.params, p.control, p.u)?;
    let starts = initial_conditions(&p.initial_conditions, p.random_initial_conditions, field.capacity(), seed);
    let batch =
        Batch { field, starts, t_end: p.t_end, dt: p.dt, tolerance: p.tolerance, portrait: p.phase_portrait.as_ref() };
    let ends = run_batch(batch, sink)?;
    Ok(format!("constant-control u = {}: {}", p.u, describe_ends(&ends, p.t_end)))
}

#[derive(Serialize)]
#[serde(untagged)]
enum EquilibriaDocument {
    Controlled { u: f64, equilibria: Vec<EquilibriumReport> },
    Uncontrolled { coexistence: Vec<EquilibriumReport>, competition: Vec<EquilibriumReport> },
}

fn run_equilibria(p: &EquilibriaScenario, sink: &mut OutputSink) -> Result<String> {
    let describe = |reps: &[EquilibriumReport]| {
        reps.iter()
            .map(|r| {
                let class = serde_json::to_value(r.classification).expect("enum serialises");
                format!("{} {}", r.label, class.as_str().unwrap_or_default())
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let (doc, line) = match p.u {
        Some(u) => {
            let reps = equilibria_constant_control(&p.params, &p.control, u)?;
            let line = format!("equilibria at u = {u}: {}", describe(&reps));
            (EquilibriaDocument::Controlled { u, equilibria: reps }, line)
        }
        None => {
            let mut coexistence = equilibria_uncontrolled(&p.params, false);
            let mut competition = equilibria_uncontrolled(&p.params, true);
            annotate_nonlinear(&p.params, false, &mut coexistence, p.probe_horizon)?;
            annotate_nonlinear(&p.params, true, &mut competition, p.probe_horizon)?;
            let line = format!(
                "equilibria: coexistence [{}], competition [{}]",
                describe(&coexistence),
                describe(&competition)
            );
            (EquilibriaDocument::Uncontrolled { coexistence, competition }, line)
        }
    };
    sink.json("equilibria.json", &doc)?;

    if let Some(sweep) = p.sweep {
        let us = PortraitGrid::axis(sweep.u_min, sweep.u_max, sweep.points);
        let rows: Vec<(f64, Vec<EquilibriumReport>)> = us
            .par_iter()
            .map(|&u| equilibria_constant_control(&p.params, &p.control, u).map(|r| (u, r)))
            .collect::<Result<_>>()?;
        let mut table = CsvTable::new(&[
            "u (1)",
            "label",
            "H (cells)",
            "C (cells)",
            "eig1_re (1/day)",
            "eig1_im (1/day)",
            "eig2_re (1/day)",
            "eig2_im (1/day)",
            "classification",
        ]);
        for (u, reps) in rows {
            for r in reps {
                let class = serde_json::to_value(r.classification).expect("enum serialises");
                let [a, b] = r.eigenvalues;
                table.push(vec![
                    u.into(),
                    r.label.into(),
                    r.point.h.into(),
                    r.point.c.into(),
                    a.re.into(),
                    a.im.into(),
                    b.re.into(),
                    b.im.into(),
                    class.as_str().unwrap_or_default().into(),
                ])?;
            }
        }
        sink.csv("equilibria_sweep.csv", &table)?;
    }
    Ok(line)
}

/// Solve the control problem with the selected method.
pub fn solve(kind: SolverKind, setup: &OcpSetup, direct: &DirectOptions, fbsm: &FbsmOptions) -> Result<OcpSolution> {
    match kind {
        SolverKind::Direct => solve_direct(setup, direct),
        SolverKind::Fbsm => solve_fbsm(setup, fbsm),
    }
}

/// `sqrt(∫ (u_a - u_b)^2 dt)` for controls on the same grid.
pub fn control_distance(a: &PiecewiseControl, b: &PiecewiseControl) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch("controls live on different grids".into()));
    }
    Ok(a.intervals().zip(b.intervals()).map(|((s, e, ua), (_, _, ub))| (ua - ub).powi(2) * (e - s)).sum::<f64>().sqrt())
}

#[derive(Serialize)]
struct ProtocolSummary {
    label: String,
    cost: f64,
    accumulated_dose: f64,
    final_state: State,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
}

#[derive(Serialize)]
struct CrossCheck {
    relative_cost_gap: f64,
    control_l2_distance: f64,
}

#[derive(Serialize)]
struct OcpSummary {
    protocols: Vec<ProtocolSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
}

fn trajectory_table(sol: &OcpSolution) -> Result<CsvTable> {
    let mut header = vec!["t (days)", "H (cells)", "C (cells)", "u (1)"];
    if sol.adjoints.is_some() {
        header.extend(["p_H (cells day)", "p_C (cells day)"]);
    }
    let mut table = CsvTable::new(&header);
    let traj = &sol.trajectory;
    let controls = traj.controls.as_deref().unwrap_or_default();
    for (i, (&t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let u = controls.get(i).copied().unwrap_or_else(|| sol.control.at(t));
        let mut row: Vec<Cell> = vec![t.into(), s.h.into(), s.c.into(), u.into()];
        if let Some(adj) = &sol.adjoints {
            row.extend([adj[i].p_h.into(), adj[i].p_c.into()]);
        }
        table.push(row)?;
    }
    Ok(table)
}

fn dose_table(report: &crate::ocp::DoseReport) -> Result<CsvTable> {
    let mut table = CsvTable::new(&[
        "scenario",
        "protocol",
        "interval_start (days)",
        "interval_end (days)",
        "u (1)",
        "interval_dose (days)",
        "total_dose (days)",
    ]);
    for (label, protocol, seg, total) in report.rows() {
        table.push(vec![
            label.into(),
            protocol.into(),
            seg.start.into(),
            seg.end.into(),
            seg.u.into(),
            seg.dose.into(),
            total.into(),
        ])?;
    }
    Ok(table)
}

fn run_ocp(p: &OcpScenario, sink: &mut OutputSink) -> Result<(String, bool)> {
    let setup = &p.setup;
    let solutions: Vec<OcpSolution> =
        p.solvers.par_iter().map(|&k| solve(k, setup, &p.direct, &p.fbsm)).collect::<Result<_>>()?;

    let constant = PiecewiseControl::constant(setup.t_f, setup.n_grid, p.constant_u)?;
    let constant_traj = simulate_control(setup, &constant)?;
    let mut protocols = vec![ProtocolSummary {
        label: format!("constant u = {}", p.constant_u),
        cost: cost(&constant_traj, &constant, &setup.comp, &setup.weights)?,
        accumulated_dose: constant.integral(),
        final_state: constant_traj.last().expect("nonempty"),
        converged: None,
    }];

    for (kind, sol) in p.solvers.iter().zip(&solutions) {
        sink.csv(&format!("ocp_{}_trajectory.csv", kind.as_str()), &trajectory_table(sol)?)?;
        sink.json(&format!("ocp_{}.json", kind.as_str()), sol)?;
        protocols.push(ProtocolSummary {
            label: sol.solver.as_str().into(),
            cost: sol.cost,
            accumulated_dose: sol.accumulated_dose,
            final_state: sol.final_state(),
            converged: Some(sol.convergence.converged),
        });
    }
    let cross_check = match solutions.as_slice() {
        [a, b] => Some(CrossCheck {
            relative_cost_gap: (a.cost - b.cost).abs() / a.cost.min(b.cost),
            control_l2_distance: control_distance(&a.control, &b.control)?,
        }),
        _ => None,
    };

    let labelled: Vec<(String, &OcpSolution)> =
        p.solvers.iter().zip(&solutions).map(|(k, s)| (k.as_str().to_string(), s)).collect();
    let report = dose_report(&labelled, p.constant_u)?;
    sink.csv("dose_report.csv", &dose_table(&report)?)?;
    sink.json("ocp_summary.json", &OcpSummary { protocols, cross_check })?;

    let converged = solutions.iter().all(|s| s.convergence.converged);
    let parts: Vec<String> = solutions
        .iter()
        .map(|s| {
            let end = s.final_state();
            format!(
                "{} J = {:.8e} H(t_f) = {:.6e} C(t_f) = {:.6e} dose = {:.6} {}",
                s.solver.as_str(),
                s.cost,
                end.h,
                end.c,
                s.accumulated_dose,
                if s.convergence.converged { "converged" } else { "NOT converged" }
            )
        })
        .collect();
    Ok((format!("ocp: {}", parts.join("; ")), converged))
}

fn run_dose_report(p: &DoseReportScenario, sink: &mut OutputSink) -> Result<(String, bool)> {
    let solutions: Vec<OcpSolution> = (0..p.scenarios.len())
        .into_par_iter()
        .map(|i| solve(p.solver, &p.setup_for(i), &p.direct, &p.fbsm))
        .collect::<Result<_>>()?;
    let labelled: Vec<(String, &OcpSolution)> =
        p.scenarios.iter().zip(&solutions).map(|(ic, s)| (ic.label.clone(), s)).collect();
    let report = dose_report(&labelled, p.constant_u)?;
    sink.csv("dose_report.csv", &dose_table(&report)?)?;
    sink.json("dose_report.json", &report)?;
    let converged = solutions.iter().all(|s| s.convergence.converged);
    let totals: Vec<String> = report
        .scenarios
        .iter()
        .map(|s| format!("{} constant {:.6} optimal {:.6}", s.label, s.constant_total, s.optimal_total))
        .collect();
    let status = if converged { "" } else { " (NOT converged)" };
    Ok((format!("dose-report: {}{status}", totals.join("; ")), converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CompetitionParams, ControlParams};

    #[test]
    fn sample_times_end_exactly() {
        let t = sample_times(0.0, 1.0, 0.3);
        assert_eq!(t, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert_eq!(sample_times(0.0, 1.0, 0.25).len(), 5);
        assert_eq!(*sample_times(0.0, 200.0, 1.0).last().unwrap(), 200.0);
    }

    #[test]
    fn empty_portrait_is_an_error() {
        let field = VectorField::uncontrolled(System::Competition, CompetitionParams::default());
        let grid = PortraitGrid { h_points: 0, ..PortraitGrid::default() };
        assert!(matches!(phase_portrait(&field, &grid), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn field_vanishes_at_tumor_point() {
        let p = CompetitionParams::default();
        let field = VectorField::uncontrolled(System::Competition, p);
        let grid = PortraitGrid { h_min: 0.0, h_max: 0.0, c_min: p.k, c_max: p.k, h_points: 1, c_points: 1 };
        let rows = phase_portrait(&field, &grid).unwrap();
        assert_eq!(rows[0].1, (0.0, 0.0));
    }

    #[test]
    fn coexistence_field_vanishes_on_the_capacity_line() {
        let p = CompetitionParams { gamma: 0.0, ..CompetitionParams::default() };
        let field = VectorField::uncontrolled(System::Competition, p);
        let grid = PortraitGrid { h_min: 0.0, h_max: p.k, c_min: 0.0, c_max: p.k, h_points: 11, c_points: 11 };
        for (s, (dh, dc)) in phase_portrait(&field, &grid).unwrap() {
            if (s.h + s.c - p.k).abs() < 1e-9 * p.k {
                assert!(dh.abs() < 1e-9 && dc.abs() < 1e-9, "({}, {}) -> ({dh}, {dc})", s.h, s.c);
            }
        }
    }

    #[test]
    fn controlled_field_vanishes_at_healthy_equilibrium() {
        let (p, cp) = (CompetitionParams::default(), ControlParams::default());
        let field = VectorField::constant_control(p, cp, 0.7).unwrap();
        let h = p.k * (1.0 - cp.lambda_h * 0.7 / p.r_h);
        let grid = PortraitGrid { h_min: h, h_max: h, c_min: 0.0, c_max: 0.0, h_points: 1, c_points: 1 };
        let (dh, dc) = phase_portrait(&field, &grid).unwrap()[0].1;
        assert!(dh.abs() < 1e-9 * p.k && dc == 0.0, "{dh} {dc}");
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let a = initial_conditions(&[], 5, 7e5, 42);
        assert_eq!(a, initial_conditions(&[], 5, 7e5, 42));
        assert_ne!(a, initial_conditions(&[], 5, 7e5, 43));
        assert!(a.iter().all(|s| s.h >= 0.0 && s.h <= 7e5 && s.c > 0.0 && s.c <= 7e5));
    }
}
