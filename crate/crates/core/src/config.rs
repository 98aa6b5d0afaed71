//! Scenario configuration: JSON ingestion, defaults and validation.
//!
//! A configuration names a scenario `kind`, a kind-specific `parameters`
//! record, output options and a seed. Unknown keys are rejected at every
//! level, absent optional fields take the defaults documented in
//! `schema/scenario.schema.json`, and every record is validated before any
//! computation starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::dynamics::{CompetitionParams, ControlParams, IntegrationTolerance, State, System};
use crate::error::{require, require_finite, Error, Result};
use crate::growth::GrowthParams;
use crate::ocp::{DirectOptions, FbsmOptions, OcpSetup, SweepUpdate};
use crate::radiotherapy::{FractionationPlan, LqParams, PiecewiseGrowthParams};

/// Longest sample grid any scenario may request.
const MAX_SAMPLES: f64 = 1e7;
/// Largest number of generated initial conditions or grid points per axis.
const MAX_BATCH: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Growth,
    Fractionated,
    Competition,
    Equilibria,
    ConstantControl,
    Ocp,
    DoseReport,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Growth,
        Kind::Fractionated,
        Kind::Competition,
        Kind::Equilibria,
        Kind::ConstantControl,
        Kind::Ocp,
        Kind::DoseReport,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Growth => "growth",
            Kind::Fractionated => "fractionated",
            Kind::Competition => "competition",
            Kind::Equilibria => "equilibria",
            Kind::ConstantControl => "constant-control",
            Kind::Ocp => "ocp",
            Kind::DoseReport => "dose-report",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: true, json: true }
    }
}

/// Single-population growth curves on `[t0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthScenario {
    pub c0: f64,
    pub t0: f64,
    pub td: f64,
    pub gompertz_a_cap: f64,
    pub gompertz_a_rate: f64,
    pub verhulst_r: f64,
    pub verhulst_k: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for GrowthScenario {
    fn default() -> Self {
        let g = GrowthParams::default();
        Self {
            c0: g.c0,
            t0: g.t0,
            td: g.td,
            gompertz_a_cap: g.gompertz_a_cap,
            gompertz_a_rate: g.gompertz_a_rate,
            verhulst_r: g.verhulst_r,
            verhulst_k: g.verhulst_k,
            t_end: 100.0,
            dt: 0.5,
        }
    }
}

impl GrowthScenario {
    pub fn params(&self) -> GrowthParams {
        GrowthParams {
            c0: self.c0,
            t0: self.t0,
            td: self.td,
            gompertz_a_cap: self.gompertz_a_cap,
            gompertz_a_rate: self.gompertz_a_rate,
            verhulst_r: self.verhulst_r,
            verhulst_k: self.verhulst_k,
        }
    }

    fn validate(&self) -> Result<()> {
        self.params().validate()?;
        sample_grid("t_end", self.t0, self.t_end, self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FractionatedScenario {
    pub growth: PiecewiseGrowthParams,
    pub lq_cancer: LqParams,
    pub lq_healthy: LqParams,
    pub plan: FractionationPlan,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for FractionatedScenario {
    fn default() -> Self {
        Self {
            growth: PiecewiseGrowthParams::default(),
            lq_cancer: LqParams::CANCER,
            lq_healthy: LqParams::HEALTHY,
            plan: FractionationPlan::default(),
            t_end: 700.0,
            dt: 0.05,
        }
    }
}

impl FractionatedScenario {
    fn validate(&self) -> Result<()> {
        self.growth.validate()?;
        self.lq_cancer.validate()?;
        self.lq_healthy.validate()?;
        self.plan.validate()?;
        sample_grid("t_end", 0.0, self.t_end, self.dt)
    }
}

/// Rectangular `(H, C)` grid for vector-field sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortraitGrid {
    pub h_min: f64,
    pub h_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub h_points: usize,
    pub c_points: usize,
}

impl Default for PortraitGrid {
    fn default() -> Self {
        Self { h_min: 0.0, h_max: 7e5, c_min: 0.0, c_max: 7e5, h_points: 21, c_points: 21 }
    }
}

impl PortraitGrid {
    /// Grid nodes along one axis, bounds included.
    pub fn axis(min: f64, max: f64, points: usize) -> Vec<f64> {
        match points {
            0 => Vec::new(),
            1 => vec![min],
            n => (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("h_min", self.h_min), ("h_max", self.h_max), ("c_min", self.c_min), ("c_max", self.c_max)] {
            require_finite(name, v)?;
        }
        require(self.h_min >= 0.0 && self.c_min >= 0.0, || "phase portrait bounds must be nonnegative".into())?;
        require(self.h_max >= self.h_min && self.c_max >= self.c_min, || {
            "phase portrait requires min <= max on both axes".into()
        })?;
        require(self.h_points <= MAX_BATCH && self.c_points <= MAX_BATCH, || {
            format!("phase portrait resolution is limited to {MAX_BATCH} points per axis")
        })
    }
}

/// Uncontrolled two-population trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompetitionScenario {
    pub system: System,
    pub params: CompetitionParams,
    pub initial_conditions: Vec<State>,
    /// Additional initial conditions drawn uniformly from `[0, K]^2` with the seed.
    pub random_initial_conditions: usize,
    pub t_end: f64,
    /// Sample spacing of the emitted trajectories (days).
    pub dt: f64,
    pub tolerance: IntegrationTolerance,
    pub phase_portrait: Option<PortraitGrid>,
}

impl Default for CompetitionScenario {
    fn default() -> Self {
        Self {
            system: System::Competition,
            params: CompetitionParams::default(),
            initial_conditions: vec![State::new(6.3e5, 0.7e5)],
            random_initial_conditions: 0,
            t_end: 200.0,
            dt: 1.0,
            tolerance: IntegrationTolerance::default(),
            phase_portrait: None,
        }
    }
}

impl CompetitionScenario {
    fn validate(&self) -> Result<()> {
        require(self.system != System::Controlled, || {
            "system \"controlled\" belongs to the constant-control scenario".into()
        })?;
        self.params.validate()?;
        validate_batch(&self.initial_conditions, self.random_initial_conditions, &self.tolerance, self.phase_portrait)?;
        sample_grid("t_end", 0.0, self.t_end, self.dt)
    }
}

/// Competition model under a constant dose rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantControlScenario {
    pub params: CompetitionParams,
    pub control: ControlParams,
    pub u: f64,
    pub initial_conditions: Vec<State>,
    pub random_initial_conditions: usize,
    pub t_end: f64,
    pub dt: f64,
    pub tolerance: IntegrationTolerance,
    pub phase_portrait: Option<PortraitGrid>,
}

impl Default for ConstantControlScenario {
    fn default() -> Self {
        Self {
            params: CompetitionParams::default(),
            control: ControlParams::default(),
            u: 0.7,
            initial_conditions: vec![State::new(6.3e5, 0.7e5)],
            random_initial_conditions: 0,
            t_end: 200.0,
            dt: 1.0,
            tolerance: IntegrationTolerance::default(),
            phase_portrait: None,
        }
    }
}

impl ConstantControlScenario {
    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.control.validate()?;
        self.control.check_control(self.u)?;
        validate_batch(&self.initial_conditions, self.random_initial_conditions, &self.tolerance, self.phase_portrait)?;
        sample_grid("t_end", 0.0, self.t_end, self.dt)
    }
}

/// Dose rates at which the constant-control equilibria are tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSweep {
    pub u_min: f64,
    pub u_max: f64,
    pub points: usize,
}

impl Default for ControlSweep {
    fn default() -> Self {
        Self { u_min: 0.0, u_max: 1.0, points: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriaScenario {
    pub params: CompetitionParams,
    pub control: ControlParams,
    /// Constant dose rate; absent for the uncontrolled systems.
    pub u: Option<f64>,
    /// Simulation horizon used to probe non-hyperbolic points (days).
    pub probe_horizon: f64,
    pub sweep: Option<ControlSweep>,
}

impl Default for EquilibriaScenario {
    fn default() -> Self {
        Self {
            params: CompetitionParams::default(),
            control: ControlParams::default(),
            u: None,
            probe_horizon: 20_000.0,
            sweep: None,
        }
    }
}

impl EquilibriaScenario {
    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.control.validate()?;
        if let Some(u) = self.u {
            self.control.check_control(u)?;
        }
        require(self.probe_horizon > 0.0 && self.probe_horizon.is_finite(), || {
            "probe_horizon must be positive".into()
        })?;
        if let Some(s) = self.sweep {
            require(s.points > 0 && s.points <= MAX_BATCH, || format!("sweep points must lie in [1, {MAX_BATCH}]"))?;
            require(s.u_min <= s.u_max, || "sweep requires u_min <= u_max".into())?;
            self.control.check_control(s.u_min)?;
            self.control.check_control(s.u_max)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Direct,
    Fbsm,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Fbsm => "fbsm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpScenario {
    pub setup: OcpSetup,
    pub solvers: Vec<SolverKind>,
    pub direct: DirectOptions,
    pub fbsm: FbsmOptions,
    /// Dose rate of the constant reference protocol.
    pub constant_u: f64,
}

impl Default for OcpScenario {
    fn default() -> Self {
        Self {
            setup: OcpSetup::default(),
            solvers: vec![SolverKind::Direct, SolverKind::Fbsm],
            direct: DirectOptions::default(),
            fbsm: FbsmOptions::default(),
            constant_u: 0.7,
        }
    }
}

impl OcpScenario {
    fn validate(&self) -> Result<()> {
        validate_setup(&self.setup, self.constant_u)?;
        require(!self.solvers.is_empty(), || "at least one solver is required".into())?;
        require(
            (1..self.solvers.len()).all(|i| !self.solvers[..i].contains(&self.solvers[i])),
            || "solvers must not repeat".into(),
        )?;
        validate_options(&self.direct, &self.fbsm)
    }
}

/// Initial condition of one dose-report scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub label: String,
    pub h0: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoseReportScenario {
    /// Shared problem definition; its `h0`, `c0` are replaced per scenario.
    pub setup: OcpSetup,
    pub scenarios: Vec<InitialCondition>,
    pub constant_u: f64,
    pub solver: SolverKind,
    pub direct: DirectOptions,
    pub fbsm: FbsmOptions,
}

impl Default for DoseReportScenario {
    fn default() -> Self {
        let ic = |label: &str, h0: f64, c0: f64| InitialCondition { label: label.into(), h0, c0 };
        Self {
            setup: OcpSetup::default(),
            scenarios: vec![ic("a", 6.3e5, 0.7e5), ic("b", 5.6e5, 1.4e5), ic("c", 4.9e5, 2.1e5)],
            constant_u: 0.7,
            solver: SolverKind::Direct,
            direct: DirectOptions::default(),
            fbsm: FbsmOptions::default(),
        }
    }
}

impl DoseReportScenario {
    /// The problem definition of scenario `i`.
    pub fn setup_for(&self, i: usize) -> OcpSetup {
        let ic = &self.scenarios[i];
        OcpSetup { h0: ic.h0, c0: ic.c0, ..self.setup }
    }

    fn validate(&self) -> Result<()> {
        validate_setup(&self.setup, self.constant_u)?;
        require(!self.scenarios.is_empty(), || "at least one scenario is required".into())?;
        require(self.scenarios.len() <= MAX_BATCH, || format!("at most {MAX_BATCH} scenarios"))?;
        for (i, ic) in self.scenarios.iter().enumerate() {
            require(!ic.label.is_empty() && !ic.label.contains([',', '"', '\n', '\r']), || {
                format!("scenario label {:?} must be nonempty and free of CSV delimiters", ic.label)
            })?;
            require(self.scenarios[..i].iter().all(|o| o.label != ic.label), || {
                format!("duplicate scenario label {:?}", ic.label)
            })?;
            self.setup_for(i).validate()?;
        }
        validate_options(&self.direct, &self.fbsm)
    }
}

/// Kind-specific parameter record.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Parameters {
    Growth(GrowthScenario),
    Fractionated(FractionatedScenario),
    Competition(CompetitionScenario),
    Equilibria(EquilibriaScenario),
    ConstantControl(ConstantControlScenario),
    Ocp(OcpScenario),
    DoseReport(DoseReportScenario),
}

impl Parameters {
    pub fn kind(&self) -> Kind {
        match self {
            Parameters::Growth(_) => Kind::Growth,
            Parameters::Fractionated(_) => Kind::Fractionated,
            Parameters::Competition(_) => Kind::Competition,
            Parameters::Equilibria(_) => Kind::Equilibria,
            Parameters::ConstantControl(_) => Kind::ConstantControl,
            Parameters::Ocp(_) => Kind::Ocp,
            Parameters::DoseReport(_) => Kind::DoseReport,
        }
    }

    /// All-default record of the given kind.
    pub fn default_for(kind: Kind) -> Self {
        match kind {
            Kind::Growth => Parameters::Growth(GrowthScenario::default()),
            Kind::Fractionated => Parameters::Fractionated(FractionatedScenario::default()),
            Kind::Competition => Parameters::Competition(CompetitionScenario::default()),
            Kind::Equilibria => Parameters::Equilibria(EquilibriaScenario::default()),
            Kind::ConstantControl => Parameters::ConstantControl(ConstantControlScenario::default()),
            Kind::Ocp => Parameters::Ocp(OcpScenario::default()),
            Kind::DoseReport => Parameters::DoseReport(DoseReportScenario::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Parameters::Growth(p) => p.validate(),
            Parameters::Fractionated(p) => p.validate(),
            Parameters::Competition(p) => p.validate(),
            Parameters::Equilibria(p) => p.validate(),
            Parameters::ConstantControl(p) => p.validate(),
            Parameters::Ocp(p) => p.validate(),
            Parameters::DoseReport(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub parameters: Parameters,
    pub output: OutputSpec,
    /// Seed for randomised initial-condition sweeps.
    pub seed: u64,
}

#[derive(Serialize)]
struct Canonical<'a> {
    kind: Kind,
    parameters: &'a Parameters,
    output: &'a OutputSpec,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig<'a> {
    kind: Kind,
    #[serde(borrow, default)]
    parameters: Option<&'a RawValue>,
    #[serde(default)]
    output: OutputSpec,
    #[serde(default)]
    seed: u64,
}

impl ScenarioConfig {
    pub fn new(parameters: Parameters) -> Self {
        Self { parameters, output: OutputSpec::default(), seed: 0 }
    }

    pub fn kind(&self) -> Kind {
        self.parameters.kind()
    }

    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig<'_> = serde_json::from_str(text).map_err(|e| parse_error(&e, text, 0))?;
        let parameters = match raw.parameters {
            None => Parameters::default_for(raw.kind),
            Some(value) => {
                let offset = value.get().as_ptr() as usize - text.as_ptr() as usize;
                let sub = value.get();
                let at = |e: serde_json::Error| parse_error(&e, text, offset);
                match raw.kind {
                    Kind::Growth => Parameters::Growth(parse(sub).map_err(at)?),
                    Kind::Fractionated => Parameters::Fractionated(parse(sub).map_err(at)?),
                    Kind::Competition => Parameters::Competition(parse(sub).map_err(at)?),
                    Kind::Equilibria => Parameters::Equilibria(parse(sub).map_err(at)?),
                    Kind::ConstantControl => Parameters::ConstantControl(parse(sub).map_err(at)?),
                    Kind::Ocp => Parameters::Ocp(parse(sub).map_err(at)?),
                    Kind::DoseReport => Parameters::DoseReport(parse(sub).map_err(at)?),
                }
            }
        };
        let cfg = Self { parameters, output: raw.output, seed: raw.seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.parameters.validate()
    }

    /// Canonical serialisation: fixed key order, shortest round-trip floats,
    /// every default written out.
    pub fn to_json(&self) -> String {
        let canonical = Canonical { kind: self.kind(), parameters: &self.parameters, output: &self.output, seed: self.seed };
        let mut text = serde_json::to_string_pretty(&canonical).expect("configurations always serialise");
        text.push('\n');
        text
    }
}

/// Read, parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text)
}

fn parse<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}

/// Report a parse error at its absolute line and column in `text`, given
/// that it was raised while parsing the slice starting at `offset`.
fn parse_error(e: &serde_json::Error, text: &str, offset: usize) -> Error {
    let prefix = &text[..offset];
    let base_line = prefix.matches('\n').count() + 1;
    let base_col = prefix.len() - prefix.rfind('\n').map_or(0, |i| i + 1) + 1;
    let (line, column) = match e.line() {
        0 => (0, 0),
        1 => (base_line, base_col + e.column().saturating_sub(1)),
        l => (base_line + l - 1, e.column()),
    };
    let mut msg = e.to_string();
    if let Some(i) = msg.rfind(" at line ") {
        msg.truncate(i);
    }
    Error::Config(format!("{msg} at line {line} column {column}"))
}

fn sample_grid(name: &str, start: f64, end: f64, dt: f64) -> Result<()> {
    require_finite(name, end)?;
    require(end > start, || format!("requires {name} > {start}"))?;
    require(dt > 0.0 && dt.is_finite(), || "requires dt > 0".into())?;
    require((end - start) / dt <= MAX_SAMPLES, || format!("the sample grid is limited to {MAX_SAMPLES:e} points"))
}

fn validate_batch(
    ics: &[State],
    random: usize,
    tol: &IntegrationTolerance,
    portrait: Option<PortraitGrid>,
) -> Result<()> {
    require(!ics.is_empty() || random > 0, || "at least one initial condition is required".into())?;
    require(ics.len() + random <= MAX_BATCH, || format!("at most {MAX_BATCH} initial conditions"))?;
    for s in ics {
        require(s.is_valid(), || format!("initial condition ({}, {}) is not in the nonnegative quadrant", s.h, s.c))?;
    }
    require(tol.rtol > 0.0 && tol.atol > 0.0 && tol.rtol.is_finite() && tol.atol.is_finite(), || {
        "tolerances must be positive".into()
    })?;
    portrait.map_or(Ok(()), |g| g.validate())
}

fn validate_setup(setup: &OcpSetup, constant_u: f64) -> Result<()> {
    setup.validate()?;
    setup.ctrl.validate()?;
    require(setup.n_grid <= MAX_BATCH, || format!("n_grid is limited to {MAX_BATCH}"))?;
    require(setup.t_f / setup.max_step <= MAX_SAMPLES, || format!("t_f / max_step is limited to {MAX_SAMPLES:e}"))?;
    setup.ctrl.check_control(constant_u)
}

fn validate_options(direct: &DirectOptions, fbsm: &FbsmOptions) -> Result<()> {
    for (name, tol, iters, frac) in [
        ("direct", direct.tol, direct.max_iter, direct.initial_fraction),
        ("fbsm", fbsm.tol, fbsm.max_iter, fbsm.initial_fraction),
    ] {
        require(tol > 0.0 && tol.is_finite(), || format!("{name}.tol must be positive"))?;
        require(iters > 0, || format!("{name}.max_iter must be positive"))?;
        require((0.0..=1.0).contains(&frac), || format!("{name}.initial_fraction must lie in [0, 1]"))?;
    }
    if let SweepUpdate::Relaxed { relax } = fbsm.update {
        require(relax > 0.0 && relax <= 1.0, || "fbsm relax must lie in (0, 1]".into())?;
    }
    Ok(())
}
