//! Automatic differentiation: second-order forward jets in two spatial
//! variables, and a reverse-mode tape over a generic scalar so the same
//! machinery yields parameter gradients of losses that contain spatial
//! second derivatives.

mod jet;
mod scalar;
mod tape;

pub use jet::{lift_elementary, DomainError, Jet2, LiftOp};
pub use scalar::{Scalar, SpatialScalar};
pub use tape::{loss_gradient, AdError, Tape, TapeScalar, Var};
