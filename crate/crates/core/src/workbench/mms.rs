//! Manufactured-solution dataset generation.
//!
//! Desk-scale stand-in for CFD ground truth. The five fields are
//! closed-form expressions: velocity comes from a streamfunction (so it
//! is divergence-free by construction) and k/ε are offset cosines kept
//! strictly positive by validation. Evaluating the transport operators
//! on these fields yields the source terms that make them exact
//! solutions, which is what lets residual checks separate "operators
//! wrong" from "data wrong".

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Jet2;
use crate::physics::{
    eps_residual, k_residual, momentum_residual, FlowState, ModelConstants, SourceTerms,
};
use crate::sampler::{BoundaryTag, CloudPoint, ZonedPointCloud};

use super::WorkbenchError;

/// Recipe for a family of manufactured datasets, one per Reynolds
/// number. With ψ = a·G(Re)·sin(αₓ(x−x₀))·sin(α_y(y−y₀)), the fields
/// are
///
///   u = ∂ψ/∂y,  v = −∂ψ/∂x,
///   p = p_amp·G·cos·cos,
///   k = k0 + k_amp·G·cos·cos,   ε = eps0 + eps_amp·G·cos·cos,
///
/// where αₓ = mπ/width, α_y = nπ/height and G(Re) = 1 +
/// re_gain·(Re−re_ref)/re_ref makes every field vary smoothly with the
/// Reynolds number, so a surrogate actually has to learn the Re axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsSpec {
    /// Streamfunction amplitude; 0 gives a quiescent velocity field.
    pub amplitude: f64,
    /// Half-wave counts across the domain in x and y.
    pub m: u32,
    pub n: u32,
    /// Relative field growth per relative Re excursion from `re_ref`.
    pub re_gain: f64,
    pub re_ref: f64,
    pub p_amp: f64,
    /// Offset and amplitude of the k field: k = k0 + k_amp·G·cos·cos.
    pub k0: f64,
    pub k_amp: f64,
    pub eps0: f64,
    pub eps_amp: f64,
    /// Domain rectangle: lower-left corner and extents.
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    /// One dataset is generated per entry.
    pub re_list: Vec<f64>,
    /// Inclusive uniform grid resolution per axis.
    pub points_per_axis: usize,
    /// Regular zone grid laid over the domain.
    pub zones_x: usize,
    pub zones_y: usize,
}

impl Default for MmsSpec {
    fn default() -> Self {
        MmsSpec {
            amplitude: 0.1,
            m: 1,
            n: 1,
            re_gain: 0.25,
            re_ref: 1500.0,
            p_amp: 0.05,
            k0: 0.05,
            k_amp: 0.02,
            eps0: 0.1,
            eps_amp: 0.04,
            x0: 0.0,
            y0: 0.0,
            width: 1.0,
            height: 1.0,
            re_list: vec![1000.0, 1200.0, 1400.0, 1600.0, 1800.0, 2000.0],
            points_per_axis: 20,
            zones_x: 2,
            zones_y: 2,
        }
    }
}

impl MmsSpec {
    /// Field growth factor G(Re).
    pub fn gain(&self, re: f64) -> f64 {
        1.0 + self.re_gain * (re - self.re_ref) / self.re_ref
    }

    pub fn validate(&self) -> Result<(), WorkbenchError> {
        let fail = |message: String| Err(WorkbenchError::Validation { message });
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("re_gain", self.re_gain),
            ("p_amp", self.p_amp),
            ("k0", self.k0),
            ("k_amp", self.k_amp),
            ("eps0", self.eps0),
            ("eps_amp", self.eps_amp),
            ("x0", self.x0),
            ("y0", self.y0),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        if self.m == 0 || self.n == 0 {
            return fail(format!("wavenumbers must be at least 1, got m = {}, n = {}", self.m, self.n));
        }
        if !(self.width > 0.0 && self.width.is_finite())
            || !(self.height > 0.0 && self.height.is_finite())
        {
            return fail(format!(
                "domain extents must be positive and finite, got {} × {}",
                self.width, self.height
            ));
        }
        if !(self.re_ref > 0.0 && self.re_ref.is_finite()) {
            return fail(format!("re_ref must be positive and finite, got {}", self.re_ref));
        }
        if self.re_list.is_empty() {
            return fail("re_list must name at least one Reynolds number".into());
        }
        for &re in &self.re_list {
            if !(re > 0.0 && re.is_finite()) {
                return fail(format!("Reynolds numbers must be positive and finite, got {re}"));
            }
        }
        if self.points_per_axis < 2 {
            return fail(format!(
                "points_per_axis must be at least 2 to span the domain, got {}",
                self.points_per_axis
            ));
        }
        if self.zones_x == 0 || self.zones_y == 0 {
            return fail("zone counts must be at least 1".into());
        }
        if self.zones_x > self.points_per_axis || self.zones_y > self.points_per_axis {
            return fail(format!(
                "zone grid {}×{} is finer than the {}-point axis; every zone needs a point",
                self.zones_x, self.zones_y, self.points_per_axis
            ));
        }
        // cos·cos sweeps [−1, 1] over a half wave, so strict positivity
        // of k and ε means the offset must beat the (Re-scaled)
        // amplitude at every requested Reynolds number.
        for &re in &self.re_list {
            let g = self.gain(re);
            if !(self.k0 - (self.k_amp * g).abs() > 0.0) {
                return fail(format!(
                    "k field is not strictly positive at Re = {re}: offset {} vs amplitude {}",
                    self.k0,
                    (self.k_amp * g).abs()
                ));
            }
            if !(self.eps0 - (self.eps_amp * g).abs() > 0.0) {
                return fail(format!(
                    "ε field is not strictly positive at Re = {re}: offset {} vs amplitude {}",
                    self.eps0,
                    (self.eps_amp * g).abs()
                ));
            }
        }
        Ok(())
    }

    /// All five fields with their spatial derivatives at one point.
    /// Deterministic closed-form evaluation; Re enters only through the
    /// gain factor.
    pub fn fields_at(&self, x: f64, y: f64, re: f64) -> [Jet2; 5] {
        let g = self.gain(re);
        let ax = self.m as f64 * PI / self.width;
        let ay = self.n as f64 * PI / self.height;
        let xa = Jet2::seed_affine_x(ax * (x - self.x0), ax);
        let ya = Jet2::seed_affine_y(ay * (y - self.y0), ay);
        let (sx, cx) = (xa.sin(), xa.cos());
        let (sy, cy) = (ya.sin(), ya.cos());
        let cc = cx * cy;
        [
            (sx * cy).scale(self.amplitude * g * ay),
            (cx * sy).scale(-(self.amplitude * g * ax)),
            cc.scale(self.p_amp * g),
            cc.scale(self.k_amp * g).offset(self.k0),
            cc.scale(self.eps_amp * g).offset(self.eps0),
        ]
    }

    /// Source terms that make the fields exact solutions: evaluate each
    /// transport operator (with zero sources) on the analytic fields
    /// and read off the imbalance. The mass source is identically zero
    /// by the streamfunction construction, so the literal is written
    /// instead of the rounded evaluated divergence.
    pub fn sources_at(
        &self,
        consts: &ModelConstants,
        x: f64,
        y: f64,
        re: f64,
    ) -> Result<SourceTerms, WorkbenchError> {
        let state = FlowState::from_jets(self.fields_at(x, y, re), x, y, re)?;
        let zero = SourceTerms::default();
        let (rx, ry) = momentum_residual(&state, &zero);
        let rk = k_residual(&state, consts, &zero);
        let reps = eps_residual(&state, consts, &zero);
        Ok(SourceTerms {
            s_mass: 0.0,
            s_momx: rx.value,
            s_momy: ry.value,
            s_k: rk.value,
            s_eps: reps.value,
        })
    }
}

/// Load a spec from a TOML file; missing keys fall back to defaults,
/// unknown keys are errors.
pub fn load_mms_spec(path: &Path) -> Result<MmsSpec, WorkbenchError> {
    let text = std::fs::read_to_string(path)?;
    let spec: MmsSpec = toml::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

/// Ground truth plus the per-point sources for one Reynolds number.
#[derive(Clone, Debug, PartialEq)]
pub struct MmsDataset {
    pub cloud: ZonedPointCloud,
    pub sources: Vec<SourceTerms>,
}

/// Inclusive uniform grid over the domain rectangle, tagged interior
/// (manufactured solutions supervise the boundary through data, not
/// through Dirichlet pins), zoned by a regular grid.
fn grid_points(spec: &MmsSpec) -> Vec<CloudPoint> {
    let p = spec.points_per_axis;
    let mut points = Vec::with_capacity(p * p);
    for j in 0..p {
        let y = spec.y0 + spec.height * (j as f64 / (p - 1) as f64);
        let zy = j * spec.zones_y / p;
        for i in 0..p {
            let x = spec.x0 + spec.width * (i as f64 / (p - 1) as f64);
            let zx = i * spec.zones_x / p;
            points.push(CloudPoint {
                x,
                y,
                zone: zy * spec.zones_x + zx,
                tag: BoundaryTag::Interior,
            });
        }
    }
    points
}

/// Generate one dataset per Reynolds number in `spec.re_list`.
pub fn mms_generate(
    spec: &MmsSpec,
    consts: &ModelConstants,
) -> Result<Vec<MmsDataset>, WorkbenchError> {
    spec.validate()?;
    consts.validate()?;
    let points = grid_points(spec);
    let mut datasets = Vec::with_capacity(spec.re_list.len());
    for &re in &spec.re_list {
        let mut truth = Vec::with_capacity(points.len());
        let mut sources = Vec::with_capacity(points.len());
        for pt in &points {
            let f = spec.fields_at(pt.x, pt.y, re);
            truth.push([f[0].value, f[1].value, f[2].value, f[3].value, f[4].value]);
            sources.push(spec.sources_at(consts, pt.x, pt.y, re)?);
        }
        let cloud = ZonedPointCloud::new(points.clone(), Some(truth), re)?;
        datasets.push(MmsDataset { cloud, sources });
    }
    Ok(datasets)
}
