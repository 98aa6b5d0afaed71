use thiserror::Error;

/// Errors raised by the model evaluators, integrators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function being evaluated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A result would overflow the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// A parameter record violates one of its invariants.
    #[error("invalid parameters: {0}")]
    InvalidParameter(String),

    /// The fractionation schedule is inconsistent with the simulation window.
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("control value {value} outside [0, {u_max}]")]
    ControlOutOfBounds { value: f64, u_max: f64 },

    #[error("non-finite state or derivative at t = {t}")]
    NonFinite { t: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("state component {value:e} went negative beyond tolerance at t = {t}")]
    Negativity { t: f64, value: f64 },

    #[error("maximum number of integration steps ({0}) exceeded")]
    MaxSteps(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("horizon mismatch: expected t_f = {expected}, found {found}")]
    HorizonMismatch { expected: f64, found: f64 },

    #[error("empty grid: {0}")]
    EmptyGrid(String),

    #[error("linear algebra failure: {0}")]
    Singular(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Schedule(_)
                | Error::Config(_)
                | Error::Domain(_)
                | Error::ControlOutOfBounds { .. }
                | Error::EmptyGrid(_)
                | Error::HorizonMismatch { .. }
                | Error::GridMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

pub(crate) fn require_finite(name: &str, v: f64) -> Result<()> {
    require(v.is_finite(), || format!("{name} must be finite"))
}
