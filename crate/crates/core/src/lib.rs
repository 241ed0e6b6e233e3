//! Simulator and optimal-control engine for a regularized Hughes-type crowd
//! model with controllable guide agents.
//!
//! The forward model couples a nonlinear advection-diffusion equation for
//! the pedestrian density to a regularized Eikonal equation for the common
//! travel-time potential and to ODEs for a small number of guide agents.
//! On top of the forward solver the crate provides exact discrete tangent
//! and adjoint sweeps, evacuation and crowd-cohesion objectives, and a
//! projected H1 gradient method over the agent velocity controls.

pub mod agents;
pub mod density;
pub mod eikonal;
pub mod error;
pub mod forward;
pub mod grid;
pub mod h1;
pub mod linsolve;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod output;
pub mod scenario;
pub mod sensitivity;
pub mod vec2;

pub use error::{Error, Result};
