//! Error types shared by all solver components.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or field argument was NaN or infinite.
    #[error("invalid input for {context}: value {value} is not finite")]
    InvalidInput { context: &'static str, value: f64 },

    /// Configuration failed validation. Every violated constraint is listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    /// A linear solve did not reach its tolerance.
    #[error("linear solver failed in {context}: relative residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    SolverFailure {
        context: &'static str,
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// A discrete invariant that the scheme is supposed to maintain was broken.
    #[error("invariant violation in {context}: {detail}")]
    InvariantViolation { context: &'static str, detail: String },

    /// Time step too large for the advective stability bound.
    #[error("time step {dt:.3e} exceeds the advective stability bound {limit:.3e} (max |T| = {max_transport:.3})")]
    StepSize { dt: f64, limit: f64, max_transport: f64 },

    /// Total mass dropped below the floor required by the variance objective.
    #[error("degenerate mass {mass:.3e} at t = {time:.6} (floor {floor:.1e}); the variance objective divides by the total mass")]
    DegenerateMass { mass: f64, time: f64, floor: f64 },

    /// A forward, tangent or adjoint sweep aborted at a specific step.
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with the time step index at which it occurred.
    pub fn at_step(self, step: usize) -> Error {
        Error::StepFailed { step, source: Box::new(self) }
    }
}
