//! Exact event-driven analysis of canard cycles in a planar slow-fast system
//! whose fast nullcline is continuous and piecewise linear with four pieces.
//!
//! Every zone is affine, so orbits are advanced from switching line to
//! switching line with closed-form flows; no numerical ODE integration is
//! involved outside the test oracles.

pub mod acceptance;
pub mod canard;
pub mod continuation;
pub mod linflow;
pub mod logspace;
pub mod model;
pub mod poincare;
pub mod roots;

pub use logspace::LogValue;
pub use model::{MSign, ModelError, Params, Zone};
