//! Privileged history distillation for longitudinal risk prediction.
//!
//! Teachers see an exam together with its prior visits; the student sees
//! only the current exam, reconstructs the missing priors and is trained to
//! match the teachers' per-horizon predictions.

pub mod data;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod reconstruction;
pub mod risk;

pub use error::{PhdError, Result};
