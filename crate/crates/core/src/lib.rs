//! Tumor growth, fractionated radiotherapy and optimal radiotherapy control.
//!
//! The crate is organised bottom-up:
//!
//! * [`growth`]: closed-form exponential, Gompertz and Verhulst growth laws
//! * [`radiotherapy`]: linear-quadratic cell survival and a piecewise
//!   fractionation simulator with an eradication threshold
//! * [`dynamics`]: coupled healthy/cancer ODE systems and their integration
//! * [`stability`]: equilibria, Jacobians and eigenvalue classification
//! * [`ocp`]: the radiotherapy optimal control problem, solved by an
//!   indirect (Pontryagin sweep) and a direct (transcription) method
//! * [`config`], [`scenario`], [`output`]: configuration, orchestration and
//!   CSV/JSON emission used by the `onco-control` binary

pub mod config;
pub mod dynamics;
pub mod error;
pub mod growth;
pub mod ocp;
pub mod ode;
pub mod output;
pub mod radiotherapy;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
