//! Nondimensional groups and PDE residual operators.
//!
//! The governing system is steady incompressible RANS with a two-equation
//! (k–ε) eddy-viscosity closure, written in nondimensional variables:
//! coordinates by the characteristic length, velocity by the inlet speed,
//! pressure and k by twice the dynamic pressure, ε by u³/L. Residual
//! operators consume a [`FlowState`] of second-order jets and return the
//! pointwise residual of each equation; manufactured-solution source
//! terms are subtracted verbatim so analytic fields close the system
//! exactly.
//!
//! Everything is generic over [`SpatialScalar`], so the same residual
//! code runs on plain jets (verification, evaluation) and on tape
//! variables (training), guaranteeing the two routes agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar, SpatialScalar};

/// Reference quantities defining the nondimensional system. Density is
/// carried explicitly but the normalization is dimensionally consistent
/// only at ρ = 1, which is also the default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefScales {
    pub length: f64,
    pub u_inlet: f64,
    pub rho: f64,
    /// Kinematic viscosity; Re = u_inlet·length/mu.
    pub mu: f64,
}

impl RefScales {
    pub fn new(length: f64, u_inlet: f64, rho: f64, mu: f64) -> Result<Self, PhysicsError> {
        for (name, v) in [("length", length), ("u_inlet", u_inlet), ("rho", rho), ("mu", mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PhysicsError::NonPositiveRefScale { name, value: v });
            }
        }
        Ok(RefScales { length, u_inlet, rho, mu })
    }

    pub fn reynolds(&self) -> f64 {
        self.u_inlet * self.length / self.mu
    }
}

/// Which sign convention the ε-equation sink uses. The printed form of
/// the reference system groups production and destruction as
/// −(C₁·P_k + C₂·ε)·ε/k, which differs from the standard model's
/// +C₁(ε/k)P_k − C₂ε²/k; both are available, printed form by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsSinkForm {
    #[default]
    AsPrinted,
    Standard,
}

/// Closure constants of the two-equation model plus numerical floors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConstants {
    pub c1: f64,
    pub c2: f64,
    pub sigma_k: f64,
    pub sigma_eps: f64,
    pub c_mu: f64,
    /// Guards the ε/k division and the eddy-viscosity ratio near k → 0.
    pub k_floor: f64,
    pub eps_floor: f64,
    pub eps_sink_form: EpsSinkForm,
}

impl Default for ModelConstants {
    fn default() -> Self {
        ModelConstants {
            c1: 1.44,
            c2: 1.92,
            sigma_k: 1.0,
            sigma_eps: 1.3,
            c_mu: 0.09,
            k_floor: 1e-8,
            eps_floor: 1e-8,
            eps_sink_form: EpsSinkForm::AsPrinted,
        }
    }
}

impl ModelConstants {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if self.k_floor > 0.0 && self.eps_floor > 0.0 {
            Ok(())
        } else {
            Err(PhysicsError::NonPositiveFloor { k_floor: self.k_floor, eps_floor: self.eps_floor })
        }
    }
}

/// Manufactured-solution source terms, one per equation. All zero for
/// the physical system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceTerms {
    pub s_mass: f64,
    pub s_momx: f64,
    pub s_momy: f64,
    pub s_k: f64,
    pub s_eps: f64,
}

impl SourceTerms {
    pub fn is_finite(&self) -> bool {
        [self.s_mass, self.s_momx, self.s_momy, self.s_k, self.s_eps]
            .iter()
            .all(|s| s.is_finite())
    }
}

/// The five nondimensional fields (with spatial derivatives) at one
/// point, plus the point itself and its Reynolds number.
#[derive(Clone, Copy, Debug)]
pub struct FlowState<J: SpatialScalar> {
    pub u: J,
    pub v: J,
    pub p: J,
    pub k: J,
    pub eps: J,
    pub x: f64,
    pub y: f64,
    pub re: f64,
}

impl<J: SpatialScalar> FlowState<J> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        u: J,
        v: J,
        p: J,
        k: J,
        eps: J,
        x: f64,
        y: f64,
        re: f64,
    ) -> Result<Self, PhysicsError> {
        if !(re > 0.0 && re.is_finite()) {
            return Err(PhysicsError::NonPositiveReynolds { value: re });
        }
        if !(k.primal() > 0.0) {
            return Err(PhysicsError::NonPositiveField { field: "k", value: k.primal() });
        }
        if !(eps.primal() > 0.0) {
            return Err(PhysicsError::NonPositiveField { field: "eps", value: eps.primal() });
        }
        Ok(FlowState { u, v, p, k, eps, x, y, re })
    }
}

impl FlowState<Jet2> {
    /// Assemble a state from ensemble jet output ([u, v, p, k, eps]).
    pub fn from_jets(fields: [Jet2; 5], x: f64, y: f64, re: f64) -> Result<Self, PhysicsError> {
        FlowState::new(fields[0], fields[1], fields[2], fields[3], fields[4], x, y, re)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("reference scale {name} must be positive and finite, got {value}")]
    NonPositiveRefScale { name: &'static str, value: f64 },
    #[error("floors must be positive: k_floor = {k_floor}, eps_floor = {eps_floor}")]
    NonPositiveFloor { k_floor: f64, eps_floor: f64 },
    #[error("Reynolds number must be positive and finite, got {value}")]
    NonPositiveReynolds { value: f64 },
    #[error("{field} must be positive, got {value}")]
    NonPositiveField { field: &'static str, value: f64 },
}

/// One sample of the flow fields at a point, in either dimensional or
/// nondimensional units depending on context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub k: f64,
    pub eps: f64,
}

/// Map a dimensional sample into the nondimensional system.
pub fn nondimensionalize(s: &FlowSample, refs: &RefScales) -> FlowSample {
    let dynp2 = 2.0 * refs.rho * refs.u_inlet * refs.u_inlet;
    FlowSample {
        x: s.x / refs.length,
        y: s.y / refs.length,
        u: s.u / refs.u_inlet,
        v: s.v / refs.u_inlet,
        p: s.p / dynp2,
        k: s.k / dynp2,
        eps: s.eps * refs.length / (refs.u_inlet * refs.u_inlet * refs.u_inlet),
    }
}

/// Inverse of [`nondimensionalize`].
pub fn dimensionalize(s: &FlowSample, refs: &RefScales) -> FlowSample {
    let dynp2 = 2.0 * refs.rho * refs.u_inlet * refs.u_inlet;
    FlowSample {
        x: s.x * refs.length,
        y: s.y * refs.length,
        u: s.u * refs.u_inlet,
        v: s.v * refs.u_inlet,
        p: s.p * dynp2,
        k: s.k * dynp2,
        eps: s.eps * refs.u_inlet * refs.u_inlet * refs.u_inlet / refs.length,
    }
}

/// Eddy viscosity ν̃_t = C_μ·max(k̃, k_floor)²/max(ε̃, ε_floor), as a full
/// spatial scalar — its derivatives enter the diffusion terms.
pub fn turbulent_viscosity<J: SpatialScalar>(k: J, eps: J, consts: &ModelConstants) -> J {
    let kf = k.floor_at(consts.k_floor);
    let ef = eps.floor_at(consts.eps_floor);
    (kf * kf / ef).scale(consts.c_mu)
}

/// Shear production P̃_k = ν̃_t·[2(∂u/∂x)² + 2(∂v/∂y)² + (∂u/∂y + ∂v/∂x)²],
/// the 2-D incompressible strain-rate double contraction.
pub fn production_term<J: SpatialScalar>(state: &FlowState<J>, nu_t: J) -> J {
    let ux = state.u.dx();
    let vy = state.v.dy();
    let cross = state.u.dy() + state.v.dx();
    let bracket = (ux * ux).scale(2.0) + (vy * vy).scale(2.0) + cross * cross;
    nu_t.value() * bracket
}

/// Mass conservation: ∂u/∂x + ∂v/∂y − s_mass.
pub fn continuity_residual<J: SpatialScalar>(state: &FlowState<J>, src: &SourceTerms) -> J {
    state.u.dx() + state.v.dy() - J::constant(src.s_mass)
}

/// Momentum: (U·∇)U + ∇p − (1/Re)∇²U − s, componentwise.
pub fn momentum_residual<J: SpatialScalar>(state: &FlowState<J>, src: &SourceTerms) -> (J, J) {
    let inv_re = 1.0 / state.re;
    let (u, v, p) = (state.u, state.v, state.p);
    let rx = u.value() * u.dx() + v.value() * u.dy() + p.dx()
        - (u.dxx() + u.dyy()).scale(inv_re)
        - J::constant(src.s_momx);
    let ry = u.value() * v.dx() + v.value() * v.dy() + p.dy()
        - (v.dxx() + v.dyy()).scale(inv_re)
        - J::constant(src.s_momy);
    (rx, ry)
}

/// Divergence of the scalar flux: ∇·(Uφ) expanded by the product rule.
fn scalar_convection<J: SpatialScalar>(state: &FlowState<J>, phi: J) -> J {
    state.u.value() * phi.dx()
        + phi.value() * state.u.dx()
        + state.v.value() * phi.dy()
        + phi.value() * state.v.dy()
}

/// Diffusion ∇·(D∇φ) with spatially varying D, expanded as
/// D∇²φ + ∇D·∇φ.
fn scalar_diffusion<J: SpatialScalar>(d: J, phi: J) -> J {
    d.value() * (phi.dxx() + phi.dyy()) + d.dx() * phi.dx() + d.dy() * phi.dy()
}

/// Turbulence-energy residual:
/// ∇·(Uk) − ∇·[(1/Re + ν_t/σ_k)∇k] − P_k + ε − s_k.
pub fn k_residual<J: SpatialScalar>(
    state: &FlowState<J>,
    consts: &ModelConstants,
    src: &SourceTerms,
) -> J {
    let nu_t = turbulent_viscosity(state.k, state.eps, consts);
    let d = nu_t.scale(1.0 / consts.sigma_k).offset(1.0 / state.re);
    let pk = production_term(state, nu_t);
    scalar_convection(state, state.k) - scalar_diffusion(d, state.k) - pk + state.eps.value()
        - J::constant(src.s_k)
}

/// Dissipation residual:
/// ∇·(Uε) − ∇·[(1/Re + ν_t/σ_ε)∇ε] − sink − s_ε, where the sink is
/// (C₁P_k + C₂ε)·ε/max(k, k_floor) in the printed form, or
/// C₁(ε/k)P_k − C₂ε²/k in the standard form (see [`EpsSinkForm`]).
pub fn eps_residual<J: SpatialScalar>(
    state: &FlowState<J>,
    consts: &ModelConstants,
    src: &SourceTerms,
) -> J {
    let nu_t = turbulent_viscosity(state.k, state.eps, consts);
    let d = nu_t.scale(1.0 / consts.sigma_eps).offset(1.0 / state.re);
    let pk = production_term(state, nu_t);
    let ev = state.eps.value();
    let kf = state.k.floor_at(consts.k_floor).value();
    let transport = scalar_convection(state, state.eps) - scalar_diffusion(d, state.eps);
    let body = match consts.eps_sink_form {
        EpsSinkForm::AsPrinted => transport - (pk.scale(consts.c1) + ev.scale(consts.c2)) * ev / kf,
        EpsSinkForm::Standard => {
            transport - pk.scale(consts.c1) * (ev / kf) + ev * ev / kf * Scalar::constant(consts.c2)
        }
    };
    body - J::constant(src.s_eps)
}
