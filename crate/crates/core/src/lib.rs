//! Physics-informed neural surrogates for parametric incompressible
//! turbulent flow with a k-epsilon closure.
//!
//! The crate trains an ensemble of small dense networks — one per flow
//! field (u, v, p, k, eps) — against a combination of data, boundary, and
//! PDE-residual losses, where the residuals need second spatial
//! derivatives of the network outputs. Differentiation is done with
//! second-order forward jets nested inside a reverse-mode tape, so the
//! whole pipeline is closed-form differentiable down to the parameters.
//! Everything is verified at desk scale with manufactured solutions.

pub mod autodiff;
pub mod evalreport;
pub mod net;
pub mod physics;
pub mod sampler;
pub mod trainer;
pub mod workbench;
