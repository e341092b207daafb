//! Scheduled ensemble training.
//!
//! The run goes through three phases: a warm start where each field
//! network fits only its own supervised data, a joint phase that adds
//! the momentum/continuity/k residuals with inverse-residual weights
//! calibrated at the transition, and a final phase that also activates
//! the ε residual (with its own, later-frozen weight). Epoch losses are
//! recorded before each update, so the history describes the exact
//! parameter states the run visited.
//!
//! Gradient passes are chunk-parallel with a fixed chunk size and an
//! ordered reduction, which makes every run bit-reproducible regardless
//! of the number of worker threads.

mod adam;
mod config;
mod history;

pub use adam::{learning_rate, AdamState};
pub use config::{Phase, TrainConfig};
pub use history::{LossBreakdown, LossHistory, LossRecord, HISTORY_CSV_HEADER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Jet2, Scalar, SpatialScalar, Tape, TapeScalar, Var};
use crate::net::NetworkEnsemble;
use crate::physics::{
    continuity_residual, eps_residual, k_residual, momentum_residual, FlowState, ModelConstants,
    PhysicsError, SourceTerms,
};
use crate::sampler::{split_boundary_sets, BoundaryTag, TrainingSet, ZonedPointCloud};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {message}")]
    InvalidConfig { message: String },
    #[error("invalid training data: {message}")]
    InvalidData { message: String },
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// One interior collocation point: residuals are enforced here, and the
/// data losses too when ground truth is attached. Sources close the
/// equations on manufactured problems; they default to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollocationPoint {
    pub x: f64,
    pub y: f64,
    pub re: f64,
    pub truth: Option<[f64; 5]>,
    pub src: SourceTerms,
}

/// Dirichlet target at a boundary point. Velocity pins (u, v), the
/// outlet pins pressure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BcConstraint {
    Velocity { u: f64, v: f64 },
    Pressure { p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub x: f64,
    pub y: f64,
    pub re: f64,
    pub constraint: BcConstraint,
}

/// Assembled training set, possibly spanning several point clouds (one
/// per Reynolds number).
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    interior: Vec<CollocationPoint>,
    boundary: Vec<BoundaryPoint>,
}

/// Static sizes the loss pooling divides by.
#[derive(Clone, Copy, Debug)]
struct DataCounts {
    /// Interior points carrying ground truth.
    n_data: usize,
    /// All interior collocation points.
    n_int: usize,
    /// Scalar boundary constraint terms (2 per velocity pin, 1 per
    /// pressure pin).
    m_bc: usize,
}

impl TrainingData {
    pub fn new() -> Self {
        TrainingData::default()
    }

    pub fn interior(&self) -> &[CollocationPoint] {
        &self.interior
    }

    pub fn boundary(&self) -> &[BoundaryPoint] {
        &self.boundary
    }

    pub fn push_interior(&mut self, pt: CollocationPoint) -> Result<(), TrainError> {
        let finite = pt.x.is_finite() && pt.y.is_finite() && pt.re.is_finite() && pt.re > 0.0;
        if !finite {
            return Err(TrainError::InvalidData {
                message: format!("non-finite interior point ({}, {}, Re {})", pt.x, pt.y, pt.re),
            });
        }
        if !pt.src.is_finite() {
            return Err(TrainError::InvalidData {
                message: format!("non-finite source terms at ({}, {})", pt.x, pt.y),
            });
        }
        if let Some(t) = pt.truth {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::InvalidData {
                    message: format!("non-finite ground truth at ({}, {})", pt.x, pt.y),
                });
            }
            if t[4] < 0.0 {
                return Err(TrainError::InvalidData {
                    message: format!("negative dissipation {} at ({}, {})", t[4], pt.x, pt.y),
                });
            }
        }
        self.interior.push(pt);
        Ok(())
    }

    pub fn push_boundary(&mut self, pt: BoundaryPoint) -> Result<(), TrainError> {
        let target_finite = match pt.constraint {
            BcConstraint::Velocity { u, v } => u.is_finite() && v.is_finite(),
            BcConstraint::Pressure { p } => p.is_finite(),
        };
        if !(pt.x.is_finite() && pt.y.is_finite() && pt.re.is_finite() && pt.re > 0.0 && target_finite)
        {
            return Err(TrainError::InvalidData {
                message: format!("non-finite boundary point ({}, {})", pt.x, pt.y),
            });
        }
        self.boundary.push(pt);
        Ok(())
    }

    /// Append one cloud: the sampled interior indices become collocation
    /// points (with the cloud's truth and the aligned `sources` row, if
    /// given), and every boundary-tagged point becomes a Dirichlet
    /// constraint — inlet and freestream pin velocity to
    /// (inlet_velocity, 0), walls to (0, 0), the outlet pins pressure
    /// to 0. Boundary points are appended in inlet+freestream, wall,
    /// outlet order so assembly is deterministic.
    pub fn push_cloud(
        &mut self,
        cloud: &ZonedPointCloud,
        set: &TrainingSet,
        inlet_velocity: f64,
        sources: Option<&[SourceTerms]>,
    ) -> Result<(), TrainError> {
        if let Some(src) = sources {
            if src.len() != cloud.len() {
                return Err(TrainError::InvalidData {
                    message: format!(
                        "{} source rows for a cloud of {} points",
                        src.len(),
                        cloud.len()
                    ),
                });
            }
        }
        for &i in &set.indices {
            if i >= cloud.len() {
                return Err(TrainError::InvalidData {
                    message: format!("sampled index {i} outside cloud of {} points", cloud.len()),
                });
            }
            let p = &cloud.points()[i];
            if p.tag != BoundaryTag::Interior {
                continue;
            }
            self.push_interior(CollocationPoint {
                x: p.x,
                y: p.y,
                re: cloud.re(),
                truth: cloud.truth().map(|t| t[i]),
                src: sources.map(|s| s[i]).unwrap_or_default(),
            })?;
        }
        let sets = split_boundary_sets(cloud, inlet_velocity);
        for &i in sets.inlet.iter().chain(&sets.freestream) {
            let p = &cloud.points()[i];
            self.push_boundary(BoundaryPoint {
                x: p.x,
                y: p.y,
                re: cloud.re(),
                constraint: BcConstraint::Velocity { u: sets.inlet_velocity, v: 0.0 },
            })?;
        }
        for &i in &sets.wall {
            let p = &cloud.points()[i];
            self.push_boundary(BoundaryPoint {
                x: p.x,
                y: p.y,
                re: cloud.re(),
                constraint: BcConstraint::Velocity { u: 0.0, v: 0.0 },
            })?;
        }
        for &i in &sets.outlet {
            let p = &cloud.points()[i];
            self.push_boundary(BoundaryPoint {
                x: p.x,
                y: p.y,
                re: cloud.re(),
                constraint: BcConstraint::Pressure { p: 0.0 },
            })?;
        }
        Ok(())
    }

    fn counts(&self) -> DataCounts {
        DataCounts {
            n_data: self.interior.iter().filter(|p| p.truth.is_some()).count(),
            n_int: self.interior.len(),
            m_bc: self
                .boundary
                .iter()
                .map(|b| match b.constraint {
                    BcConstraint::Velocity { .. } => 2,
                    BcConstraint::Pressure { .. } => 1,
                })
                .sum(),
        }
    }
}

/// Unweighted component losses measured at a phase transition and the
/// inverse weights derived from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub epoch: usize,
    /// (L_NS, L_Cont, L_k, L_ε) on the calibration set.
    pub components: [f64; 4],
    pub lambda: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub history: LossHistory,
    pub calibrations: Vec<CalibrationRecord>,
    /// Set when the run stopped on a non-finite loss; `params` then hold
    /// the last state whose recorded loss was finite.
    pub abort: Option<String>,
}

/// λᵢ = 1 / max(Lᵢ, 1e-12): inverse-residual weighting with a cap for
/// vanishing components.
fn inverse_weights(components: [f64; 4]) -> [f64; 4] {
    components.map(|l| 1.0 / l.max(1e-12))
}

/// Raw per-term sums of one pass; pooled means are formed once, in
/// [`compose`], so reporting and weighting cannot drift apart.
#[derive(Clone, Copy, Debug, Default)]
struct PoolSums {
    /// Σ squared data mismatch per field (ε in log space).
    data: [f64; 5],
    /// Σ (r_x² + r_y²) over both momentum components.
    ns: f64,
    cont: f64,
    k: f64,
    /// Σ ln(1 + r_ε²).
    eps: f64,
    bc: f64,
}

impl PoolSums {
    fn merge(mut self, o: PoolSums) -> PoolSums {
        for i in 0..5 {
            self.data[i] += o.data[i];
        }
        self.ns += o.ns;
        self.cont += o.cont;
        self.k += o.k;
        self.eps += o.eps;
        self.bc += o.bc;
        self
    }
}

fn compose(sums: &PoolSums, counts: DataCounts, lambda: [f64; 4]) -> LossBreakdown {
    let nd = counts.n_data.max(1) as f64;
    let ni = counts.n_int.max(1) as f64;
    let mb = counts.m_bc.max(1) as f64;
    LossBreakdown {
        l_u: sums.data[0] / nd,
        l_v: sums.data[1] / nd,
        l_p: sums.data[2] / nd,
        l_k: sums.data[3] / nd,
        l_eps_data: sums.data[4] / nd,
        l_bc: sums.bc / mb,
        l_ns: sums.ns / (2.0 * ni),
        l_cont: sums.cont / ni,
        l_k_pde: sums.k / ni,
        l_eps_pde: sums.eps / ni,
        lambda,
    }
}

/// Everything a pass needs besides the parameters and points.
struct PassCtx<'c> {
    ens: &'c NetworkEnsemble,
    consts: &'c ModelConstants,
    eps_log_floor: f64,
    chunk_size: usize,
}

fn add_term<'a, T: TapeScalar>(
    acc: Option<Var<'a, T>>,
    term: Var<'a, T>,
    coeff: f64,
) -> Option<Var<'a, T>> {
    let scaled = term.scale(coeff);
    Some(match acc {
        None => scaled,
        Some(a) => a + scaled,
    })
}

/// Squared data mismatches per field; ε is compared in log space,
/// (ln(pred + δ) − ln(true + δ))².
fn data_terms<'a, T: TapeScalar>(
    out: &[Var<'a, T>; 5],
    truth: &[f64; 5],
    delta: f64,
) -> [Var<'a, T>; 5] {
    let mut terms = [out[0]; 5];
    for i in 0..4 {
        let d = out[i].offset(-truth[i]);
        terms[i] = d * d;
    }
    let d = out[4].offset(delta).ln().offset(-(truth[4] + delta).ln());
    terms[4] = d * d;
    terms
}

/// Ordered reduction of per-chunk partial results. Chunk order is the
/// point order, so the folded sums and gradients do not depend on which
/// thread ran which chunk.
fn fold_parts(
    parts: Vec<Result<(PoolSums, Vec<f64>), TrainError>>,
    n_params: usize,
) -> Result<(PoolSums, Vec<f64>), TrainError> {
    let mut sums = PoolSums::default();
    let mut grad = vec![0.0; n_params];
    for part in parts {
        let (s, g) = part?;
        sums = sums.merge(s);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((sums, grad))
}

/// Warm-start pass: supervised losses only, on a plain-valued tape.
/// Points without truth contribute nothing.
fn warm_pass(
    ctx: &PassCtx<'_>,
    params: &[f64],
    pts: &[CollocationPoint],
    counts: DataCounts,
    with_grad: bool,
) -> Result<(PoolSums, Vec<f64>), TrainError> {
    let cd = if counts.n_data > 0 { 1.0 / counts.n_data as f64 } else { 0.0 };
    let parts: Vec<Result<(PoolSums, Vec<f64>), TrainError>> = pts
        .par_chunks(ctx.chunk_size)
        .map(|chunk| {
            let tape: Tape<'_, f64> = Tape::new(params);
            let mut sums = PoolSums::default();
            let mut grad = vec![0.0; params.len()];
            for pt in chunk {
                let Some(truth) = pt.truth else { continue };
                tape.reset();
                let out =
                    ctx.ens.forward_on_tape(&tape, ctx.ens.norm.normalize(pt.x, pt.y, pt.re));
                let terms = data_terms(&out, &truth, ctx.eps_log_floor);
                for (i, t) in terms.iter().enumerate() {
                    sums.data[i] += t.primal();
                }
                if with_grad {
                    let joint = terms[1..].iter().fold(terms[0], |a, &t| a + t);
                    tape.backward_into(joint.scale(cd), &mut grad)?;
                }
            }
            Ok((sums, grad))
        })
        .collect();
    fold_parts(parts, params.len())
}

/// Joint interior pass on a jet tape: data terms plus the PDE
/// residuals. The ε residual is always evaluated for reporting, but it
/// only enters the optimized loss when `eps_active` is set.
fn pde_pass(
    ctx: &PassCtx<'_>,
    params: &[f64],
    pts: &[CollocationPoint],
    counts: DataCounts,
    lambda: [f64; 4],
    eps_active: bool,
    with_grad: bool,
) -> Result<(PoolSums, Vec<f64>), TrainError> {
    let cd = if counts.n_data > 0 { 1.0 / counts.n_data as f64 } else { 0.0 };
    let ni = counts.n_int.max(1) as f64;
    let c_ns = lambda[0] / (2.0 * ni);
    let c_cont = lambda[1] / ni;
    let c_k = lambda[2] / ni;
    let c_eps = lambda[3] / ni;
    let parts: Vec<Result<(PoolSums, Vec<f64>), TrainError>> = pts
        .par_chunks(ctx.chunk_size)
        .map(|chunk| {
            let tape: Tape<'_, Jet2> = Tape::new(params);
            let mut sums = PoolSums::default();
            let mut grad = vec![0.0; params.len()];
            for pt in chunk {
                tape.reset();
                let jets = ctx.ens.norm.jet_inputs(pt.x, pt.y, pt.re);
                let out = ctx.ens.forward_on_tape(&tape, jets);
                let state =
                    FlowState::new(out[0], out[1], out[2], out[3], out[4], pt.x, pt.y, pt.re)?;
                let mut acc: Option<Var<'_, Jet2>> = None;
                if let Some(truth) = pt.truth {
                    let vals = [
                        out[0].value(),
                        out[1].value(),
                        out[2].value(),
                        out[3].value(),
                        out[4].value(),
                    ];
                    let terms = data_terms(&vals, &truth, ctx.eps_log_floor);
                    for (i, t) in terms.iter().enumerate() {
                        sums.data[i] += t.primal();
                        acc = add_term(acc, *t, cd);
                    }
                }
                let (rx, ry) = momentum_residual(&state, &pt.src);
                let rc = continuity_residual(&state, &pt.src);
                let rk = k_residual(&state, ctx.consts, &pt.src);
                let reps = eps_residual(&state, ctx.consts, &pt.src);
                let (tx, ty) = (rx * rx, ry * ry);
                let tc = rc * rc;
                let tk = rk * rk;
                sums.ns += tx.primal() + ty.primal();
                sums.cont += tc.primal();
                sums.k += tk.primal();
                acc = add_term(acc, tx, c_ns);
                acc = add_term(acc, ty, c_ns);
                acc = add_term(acc, tc, c_cont);
                acc = add_term(acc, tk, c_k);
                if eps_active {
                    let te = (reps * reps).offset(1.0).ln();
                    sums.eps += te.primal();
                    acc = add_term(acc, te, c_eps);
                } else {
                    // Reported but outside the loss, so a wild early ε
                    // residual cannot influence (or abort) this phase.
                    let rv = reps.primal();
                    sums.eps += (1.0 + rv * rv).ln();
                }
                if with_grad {
                    if let Some(loss) = acc {
                        tape.backward_into(loss, &mut grad)?;
                    }
                }
            }
            Ok((sums, grad))
        })
        .collect();
    fold_parts(parts, params.len())
}

/// Boundary pass: squared Dirichlet mismatches, pooled over the scalar
/// constraint terms. Plain-valued tape (no spatial derivatives needed).
fn bc_pass(
    ctx: &PassCtx<'_>,
    params: &[f64],
    pts: &[BoundaryPoint],
    counts: DataCounts,
    with_grad: bool,
) -> Result<(PoolSums, Vec<f64>), TrainError> {
    let cb = if counts.m_bc > 0 { 1.0 / counts.m_bc as f64 } else { 0.0 };
    let parts: Vec<Result<(PoolSums, Vec<f64>), TrainError>> = pts
        .par_chunks(ctx.chunk_size)
        .map(|chunk| {
            let tape: Tape<'_, f64> = Tape::new(params);
            let mut sums = PoolSums::default();
            let mut grad = vec![0.0; params.len()];
            for bp in chunk {
                tape.reset();
                let out =
                    ctx.ens.forward_on_tape(&tape, ctx.ens.norm.normalize(bp.x, bp.y, bp.re));
                let mut acc: Option<Var<'_, f64>> = None;
                match bp.constraint {
                    BcConstraint::Velocity { u, v } => {
                        let du = out[0].offset(-u);
                        let dv = out[1].offset(-v);
                        let (tu, tv) = (du * du, dv * dv);
                        sums.bc += tu.primal() + tv.primal();
                        acc = add_term(acc, tu, cb);
                        acc = add_term(acc, tv, cb);
                    }
                    BcConstraint::Pressure { p } => {
                        let dp = out[2].offset(-p);
                        let tp = dp * dp;
                        sums.bc += tp.primal();
                        acc = add_term(acc, tp, cb);
                    }
                }
                if with_grad {
                    if let Some(loss) = acc {
                        tape.backward_into(loss, &mut grad)?;
                    }
                }
            }
            Ok((sums, grad))
        })
        .collect();
    fold_parts(parts, params.len())
}

/// Full-set pass for the current phase: losses plus (optionally) the
/// gradient of the phase's optimized total.
fn phase_pass(
    ctx: &PassCtx<'_>,
    params: &[f64],
    data: &TrainingData,
    interior: &[CollocationPoint],
    counts: DataCounts,
    phase: Phase,
    lambda: [f64; 4],
    with_grad: bool,
) -> Result<(PoolSums, Vec<f64>), TrainError> {
    if phase == Phase::WarmStart {
        return warm_pass(ctx, params, interior, counts, with_grad);
    }
    let (si, gi) =
        pde_pass(ctx, params, interior, counts, lambda, phase == Phase::Full, with_grad)?;
    let (sb, gb) = bc_pass(ctx, params, &data.boundary, counts, with_grad)?;
    let mut grad = gi;
    for (a, b) in grad.iter_mut().zip(&gb) {
        *a += b;
    }
    Ok((si.merge(sb), grad))
}

/// Run the full schedule from `init_params`. Setup mistakes (bad config,
/// mismatched buffers, empty interior) are `Err`; a non-finite loss
/// mid-run is not an `Err` but an aborted outcome that keeps the last
/// finite parameter state, its history, and the abort reason.
pub fn train(
    ens: &NetworkEnsemble,
    init_params: &[f64],
    data: &TrainingData,
    consts: &ModelConstants,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    consts.validate()?;
    if init_params.len() != ens.total_params() {
        return Err(TrainError::InvalidData {
            message: format!(
                "parameter vector has {} entries, the ensemble needs {}",
                init_params.len(),
                ens.total_params()
            ),
        });
    }
    if data.interior.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::InvalidData {
            message: "no interior collocation points".to_string(),
        });
    }
    let counts = data.counts();
    let ctx = PassCtx {
        ens,
        consts,
        eps_log_floor: cfg.eps_log_floor,
        chunk_size: cfg.chunk_size,
    };

    let mut params = init_params.to_vec();
    let mut adam = AdamState::new(params.len());
    let mut history = LossHistory::default();
    let mut calibrations: Vec<CalibrationRecord> = Vec::new();
    let mut lambda_stored = [0.0f64; 4];
    let mut calibrated = false;
    let mut lambda4_active = false;
    let mut global_step = 0usize;

    macro_rules! abort {
        ($epoch:expr, $msg:expr) => {
            return Ok(TrainOutcome {
                params,
                history,
                calibrations,
                abort: Some(format!("epoch {}: {}", $epoch, $msg)),
            })
        };
    }

    for epoch in 0..cfg.epochs {
        let phase = cfg.phase_of(epoch);

        // One-shot weight calibration at the first joint epoch; λ₄ is
        // re-frozen (or reused) when the ε residual activates.
        if phase != Phase::WarmStart && !calibrated {
            let comp = match pde_pass(&ctx, &params, &data.interior, counts, [0.0; 4], false, false)
            {
                Err(e) => abort!(epoch, e),
                Ok((s, _)) => {
                    let c = compose(&s, counts, [0.0; 4]);
                    [c.l_ns, c.l_cont, c.l_k_pde, c.l_eps_pde]
                }
            };
            if comp.iter().any(|v| v.is_nan()) {
                abort!(epoch, "non-finite residual loss at calibration");
            }
            lambda_stored = inverse_weights(comp);
            calibrations.push(CalibrationRecord { epoch, components: comp, lambda: lambda_stored });
            calibrated = true;
        }
        if phase == Phase::Full && !lambda4_active {
            if cfg.eps_pde_start > cfg.warmstart_end && cfg.recalibrate_lambda4 {
                let comp =
                    match pde_pass(&ctx, &params, &data.interior, counts, [0.0; 4], false, false) {
                        Err(e) => abort!(epoch, e),
                        Ok((s, _)) => {
                            let c = compose(&s, counts, [0.0; 4]);
                            [c.l_ns, c.l_cont, c.l_k_pde, c.l_eps_pde]
                        }
                    };
                if comp[3].is_nan() {
                    abort!(epoch, "non-finite ε residual loss at recalibration");
                }
                lambda_stored[3] = inverse_weights(comp)[3];
                calibrations.push(CalibrationRecord {
                    epoch,
                    components: comp,
                    lambda: lambda_stored,
                });
            }
            lambda4_active = true;
        }

        let lambda_eff = match phase {
            Phase::WarmStart => [0.0; 4],
            Phase::PdeNoEps => [lambda_stored[0], lambda_stored[1], lambda_stored[2], 0.0],
            Phase::Full => lambda_stored,
        };

        let full_batch = cfg.batch_size == 0 || cfg.batch_size >= data.interior.len();

        // Record the epoch at its pre-update state; with a full batch
        // this pass also yields the epoch's gradient.
        let (sums, grad) = match phase_pass(
            &ctx,
            &params,
            data,
            &data.interior,
            counts,
            phase,
            lambda_eff,
            full_batch,
        ) {
            Err(e) => abort!(epoch, e),
            Ok(v) => v,
        };
        let breakdown = compose(&sums, counts, lambda_eff);
        let total = breakdown.total();
        if !total.is_finite() {
            abort!(epoch, format!("non-finite total loss {total}"));
        }
        let lr_first = learning_rate(cfg, global_step);
        history.push(LossRecord { epoch, phase, losses: breakdown, lr: lr_first, total });

        if full_batch {
            adam.step(&mut params, &grad, lr_first);
            global_step += 1;
        } else {
            let snapshot = params.clone();
            for batch in data.interior.chunks(cfg.batch_size) {
                let bcounts = DataCounts {
                    n_data: batch.iter().filter(|p| p.truth.is_some()).count(),
                    n_int: batch.len(),
                    m_bc: counts.m_bc,
                };
                match phase_pass(&ctx, &params, data, batch, bcounts, phase, lambda_eff, true) {
                    Err(e) => {
                        params = snapshot;
                        abort!(epoch, e);
                    }
                    Ok((_, g)) => {
                        let lr = learning_rate(cfg, global_step);
                        adam.step(&mut params, &g, lr);
                        global_step += 1;
                    }
                }
            }
        }
    }

    Ok(TrainOutcome { params, history, calibrations, abort: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InputNorm;
    use crate::sampler::{CloudPoint, SampleProvenance};
    use approx::assert_relative_eq;

    fn tiny_ensemble(hidden: &[usize]) -> NetworkEnsemble {
        NetworkEnsemble::new(
            hidden,
            InputNorm::from_ranges((0.0, 1.0), (0.0, 1.0), (100.0, 200.0)),
        )
    }

    fn linear_truth(x: f64, y: f64) -> [f64; 5] {
        [0.3 * x + 0.1, -0.2 * y + 0.05, 0.02 * x + 0.01 * y, 0.3 + 0.1 * x, 0.5 + 0.2 * y]
    }

    fn supervised_points(n: usize, re: f64) -> Vec<CollocationPoint> {
        (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1).max(1) as f64;
                let y = (i % 3) as f64 / 3.0;
                CollocationPoint {
                    x,
                    y,
                    re,
                    truth: Some(linear_truth(x, y)),
                    src: SourceTerms::default(),
                }
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            warmstart_end: 2,
            eps_pde_start: 4,
            chunk_size: 2,
            ..TrainConfig::default()
        }
    }

    /// Supervised mismatch terms: exact match → 0, unit velocity
    /// mismatch → 1, and a factor-e dissipation ratio → 1 in log space.
    #[test]
    fn data_terms_match_hand_examples() {
        let params: Vec<f64> = Vec::new();
        let tape: Tape<'_, f64> = Tape::new(&params);
        let out = [
            tape.leaf(1.0),
            tape.leaf(0.4),
            tape.leaf(-0.2),
            tape.leaf(0.7),
            tape.leaf(0.5 * std::f64::consts::E),
        ];
        let truth = [0.0, 0.4, -0.2, 0.7, 0.5];
        let terms = data_terms(&out, &truth, 1e-8);
        assert_eq!(terms[0].primal(), 1.0);
        assert_eq!(terms[1].primal(), 0.0);
        assert_eq!(terms[2].primal(), 0.0);
        assert_eq!(terms[3].primal(), 0.0);
        assert_relative_eq!(terms[4].primal(), 1.0, epsilon = 1e-6);
    }

    /// Zero parameters pin (u, v) = (0, 0), k = ln 2, ε = 1. A mass
    /// source of −2 then leaves a continuity residual of exactly 2, so
    /// L_Cont = 4; the k residual collapses to ε = 1, so L_k = 1.
    #[test]
    fn single_point_residual_pools_match_hand_values() {
        let ens = tiny_ensemble(&[4]);
        let params = vec![0.0; ens.total_params()];
        let ctx = PassCtx {
            ens: &ens,
            consts: &ModelConstants::default(),
            eps_log_floor: 1e-8,
            chunk_size: 8,
        };
        let pts = [CollocationPoint {
            x: 0.5,
            y: 0.25,
            re: 150.0,
            truth: None,
            src: SourceTerms { s_mass: -2.0, ..SourceTerms::default() },
        }];
        let counts = DataCounts { n_data: 0, n_int: 1, m_bc: 0 };
        let (sums, _) = pde_pass(&ctx, &params, &pts, counts, [0.0; 4], false, false).unwrap();
        let b = compose(&sums, counts, [0.0; 4]);
        assert_eq!(b.l_cont, 4.0);
        assert_eq!(b.l_k_pde, 1.0);
        assert!(b.l_ns >= 0.0 && b.l_eps_pde > 0.0);
    }

    /// The warm-start gradient of the u-net equals the gradient of a
    /// tape that records the u-net alone, bit for bit, and the other
    /// nets receive nothing from the u data loss. One Adam step applied
    /// to both gradients moves the u parameters identically.
    #[test]
    fn warm_start_updates_each_net_independently() {
        let ens = tiny_ensemble(&[3]);
        let params = ens.init_params(7);
        let pts = supervised_points(5, 150.0);
        let counts = DataCounts { n_data: 5, n_int: 5, m_bc: 0 };
        let ctx = PassCtx {
            ens: &ens,
            consts: &ModelConstants::default(),
            eps_log_floor: 1e-8,
            chunk_size: 2,
        };
        let (_, joint) = warm_pass(&ctx, &params, &pts, counts, true).unwrap();

        // Replay the u-net alone with the same chunking and fold.
        let cd = 1.0 / 5.0;
        let mut solo = vec![0.0; params.len()];
        for chunk in pts.chunks(2) {
            let tape: Tape<'_, f64> = Tape::new(&params);
            let mut g = vec![0.0; params.len()];
            for pt in chunk {
                tape.reset();
                let inputs = ens.norm.normalize(pt.x, pt.y, pt.re);
                let first = tape.leaf(inputs[0]);
                tape.leaf(inputs[1]);
                tape.leaf(inputs[2]);
                let raw = ens.net().forward_on_tape(&tape, first, 0)[0];
                let d = raw.offset(-pt.truth.unwrap()[0]);
                tape.backward_into((d * d).scale(cd), &mut g).unwrap();
            }
            for (a, b) in solo.iter_mut().zip(&g) {
                *a += b;
            }
        }

        let p = ens.params_per_net();
        assert!(joint[..p].iter().any(|g| *g != 0.0), "u gradient must be nonzero");
        assert_eq!(&joint[..p], &solo[..p], "joint and solo u gradients must agree bitwise");
        assert!(solo[p..].iter().all(|g| *g == 0.0), "u loss must not touch other nets");

        let mut joint_params = params.clone();
        let mut solo_params = params.clone();
        AdamState::new(params.len()).step(&mut joint_params, &joint, 1e-3);
        AdamState::new(params.len()).step(&mut solo_params, &solo, 1e-3);
        assert_eq!(&joint_params[..p], &solo_params[..p]);
    }

    #[test]
    fn inverse_weights_match_spec_examples() {
        assert_eq!(inverse_weights([2.0, 0.5, 1.0, 4.0]), [0.5, 2.0, 1.0, 0.25]);
        assert_eq!(inverse_weights([0.0, 1.0, 1.0, 1.0])[0], 1e12);
    }

    /// A warm-start-only run on smooth linear targets: losses fall on
    /// average, every PDE/boundary column stays exactly zero, and the
    /// weights are never activated.
    #[test]
    fn warm_only_run_drives_data_losses_down() {
        let ens = tiny_ensemble(&[4]);
        let params = ens.init_params(1);
        let mut data = TrainingData::new();
        for pt in supervised_points(6, 130.0) {
            data.push_interior(pt).unwrap();
        }
        let cfg = TrainConfig {
            epochs: 50,
            warmstart_end: 50,
            eps_pde_start: 50,
            chunk_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&ens, &params, &data, &ModelConstants::default(), &cfg).unwrap();
        assert!(out.abort.is_none());
        assert_eq!(out.history.records.len(), 50);
        for r in &out.history.records {
            assert_eq!(r.phase, Phase::WarmStart);
            let l = &r.losses;
            assert_eq!(
                (l.l_ns, l.l_cont, l.l_k_pde, l.l_eps_pde, l.l_bc),
                (0.0, 0.0, 0.0, 0.0, 0.0)
            );
            assert_eq!(l.lambda, [0.0; 4]);
        }
        assert!(out.calibrations.is_empty());
        let first: f64 = out.history.records[..25].iter().map(|r| r.total).sum();
        let second: f64 = out.history.records[25..].iter().map(|r| r.total).sum();
        assert!(second < first, "mean loss should fall: {first} vs {second}");
    }

    /// The six-epoch schedule: two warm epochs, two joint epochs with
    /// λ₄ = 0, two full epochs; calibration records at both transitions
    /// with λᵢ·Lᵢ = 1 on their epochs' rows, λ₁ frozen afterwards, and
    /// every recorded total recomposable from its components.
    #[test]
    fn schedule_boundaries_appear_in_history() {
        let ens = tiny_ensemble(&[3]);
        let params = ens.init_params(3);
        let mut data = TrainingData::new();
        for (i, pt) in supervised_points(3, 120.0).into_iter().enumerate() {
            let pt = if i == 2 { CollocationPoint { truth: None, ..pt } } else { pt };
            data.push_interior(pt).unwrap();
        }
        data.push_boundary(BoundaryPoint {
            x: 0.0,
            y: 0.5,
            re: 120.0,
            constraint: BcConstraint::Velocity { u: 1.0, v: 0.0 },
        })
        .unwrap();
        data.push_boundary(BoundaryPoint {
            x: 1.0,
            y: 0.5,
            re: 120.0,
            constraint: BcConstraint::Pressure { p: 0.0 },
        })
        .unwrap();

        let cfg = small_config();
        let out = train(&ens, &params, &data, &ModelConstants::default(), &cfg).unwrap();
        assert!(out.abort.is_none());
        let rows = &out.history.records;
        assert_eq!(rows.len(), 6);
        let phases: Vec<Phase> = rows.iter().map(|r| r.phase).collect();
        assert_eq!(
            phases,
            [
                Phase::WarmStart,
                Phase::WarmStart,
                Phase::PdeNoEps,
                Phase::PdeNoEps,
                Phase::Full,
                Phase::Full
            ]
        );
        for r in &rows[..2] {
            assert_eq!(r.losses.lambda, [0.0; 4]);
            assert_eq!(r.losses.l_ns, 0.0);
            assert_eq!(r.losses.l_bc, 0.0);
        }
        for r in &rows[2..4] {
            assert_eq!(r.losses.lambda[3], 0.0, "ε weight must stay off before activation");
            assert!(r.losses.lambda[0] > 0.0 && r.losses.l_bc > 0.0);
            assert!(r.losses.l_eps_pde > 0.0, "ε residual is still reported");
        }
        for r in &rows[4..] {
            assert!(r.losses.lambda[3] > 0.0, "ε weight active in the full phase");
        }
        for r in rows {
            assert_eq!(r.total, r.losses.total());
        }

        assert_eq!(out.calibrations.len(), 2);
        assert_eq!((out.calibrations[0].epoch, out.calibrations[1].epoch), (2, 4));
        // Inverse-weight identity on the calibration epochs' rows (same
        // parameters, same deterministic pass).
        let row2 = &rows[2].losses;
        for (lam, l) in out.calibrations[0].lambda.iter().zip([
            row2.l_ns,
            row2.l_cont,
            row2.l_k_pde,
            row2.l_eps_pde,
        ]) {
            assert!((lam * l - 1.0).abs() <= 1e-12, "λ·L = {}", lam * l);
        }
        let row4 = &rows[4].losses;
        assert!((row4.lambda[3] * row4.l_eps_pde - 1.0).abs() <= 1e-12);
        // λ₁..λ₃ frozen at the first calibration.
        for r in &rows[2..] {
            assert_eq!(&r.losses.lambda[..3], &out.calibrations[0].lambda[..3]);
        }
    }

    /// Without recalibration, the ε weight activated at `eps_pde_start`
    /// is the one frozen at the warm-start transition.
    #[test]
    fn lambda4_reuse_skips_recalibration() {
        let ens = tiny_ensemble(&[3]);
        let params = ens.init_params(3);
        let mut data = TrainingData::new();
        for pt in supervised_points(3, 120.0) {
            data.push_interior(pt).unwrap();
        }
        let cfg = TrainConfig { recalibrate_lambda4: false, ..small_config() };
        let out = train(&ens, &params, &data, &ModelConstants::default(), &cfg).unwrap();
        assert_eq!(out.calibrations.len(), 1);
        assert_eq!(
            out.history.records[4].losses.lambda[3],
            out.calibrations[0].lambda[3],
            "activated ε weight must be the frozen one"
        );
    }

    /// Identical runs are bit-identical, including across thread counts:
    /// the chunked reduction is ordered, so the pool size cannot leak
    /// into results.
    #[test]
    fn reruns_and_thread_counts_reproduce_bitwise() {
        let ens = tiny_ensemble(&[3]);
        let params = ens.init_params(11);
        let mut data = TrainingData::new();
        for pt in supervised_points(5, 140.0) {
            data.push_interior(pt).unwrap();
        }
        data.push_boundary(BoundaryPoint {
            x: 0.0,
            y: 0.0,
            re: 140.0,
            constraint: BcConstraint::Velocity { u: 1.0, v: 0.0 },
        })
        .unwrap();
        let cfg = small_config();
        let consts = ModelConstants::default();

        let run = || train(&ens, &params, &data, &consts, &cfg).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let quad = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        let plain = run();

        assert_eq!(single.history.to_csv(), quad.history.to_csv());
        assert_eq!(single.history.to_csv(), plain.history.to_csv());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&single.params), bits(&quad.params));
        assert_eq!(bits(&single.params), bits(&plain.params));
    }

    /// A divergent loss aborts the run and hands back the last finite
    /// state; a zero-epoch run is a no-op.
    #[test]
    fn non_finite_loss_aborts_with_last_finite_params() {
        let ens = tiny_ensemble(&[3]);
        let params = ens.init_params(5);
        let mut data = TrainingData::new();
        data.push_interior(CollocationPoint {
            x: 0.5,
            y: 0.5,
            re: 150.0,
            // Finite but absurd: the squared mismatch overflows to ∞.
            truth: Some([1e200, 0.0, 0.0, 0.1, 0.1]),
            src: SourceTerms::default(),
        })
        .unwrap();
        let cfg = TrainConfig { epochs: 3, warmstart_end: 1, eps_pde_start: 1, ..TrainConfig::default() };
        let out = train(&ens, &params, &data, &ModelConstants::default(), &cfg).unwrap();
        assert!(out.abort.is_some(), "overflowing loss must abort");
        assert!(out.history.records.is_empty(), "no finite epoch was completed");
        assert_eq!(out.params, params, "initial state is the last finite one");

        let noop = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&ens, &params, &data, &ModelConstants::default(), &noop).unwrap();
        assert!(out.abort.is_none());
        assert!(out.history.records.is_empty());
        assert_eq!(out.params, params);
    }

    /// Cloud assembly: sampled interior indices become collocation
    /// points, every boundary-tagged point becomes a constraint, and a
    /// negative dissipation truth is rejected.
    #[test]
    fn push_cloud_routes_points_and_validates() {
        let mk = |x: f64, y: f64, tag: BoundaryTag| CloudPoint { x, y, zone: 0, tag };
        let points = vec![
            mk(0.1, 0.1, BoundaryTag::Interior),
            mk(0.2, 0.2, BoundaryTag::Interior),
            mk(0.0, 0.5, BoundaryTag::Inlet),
            mk(0.5, 0.0, BoundaryTag::Wall),
            mk(1.0, 0.5, BoundaryTag::Outlet),
            mk(0.5, 1.0, BoundaryTag::Freestream),
        ];
        let truth: Vec<[f64; 5]> = (0..6).map(|i| [0.1 * i as f64, 0.0, 0.0, 0.2, 0.3]).collect();
        let cloud = ZonedPointCloud::new(points.clone(), Some(truth), 180.0).unwrap();
        // Select one interior and one boundary index; the boundary one
        // must not become a collocation point.
        let set = TrainingSet {
            indices: vec![0, 2],
            provenance: SampleProvenance { seed: 0, caps: vec![2] },
        };
        let mut data = TrainingData::new();
        data.push_cloud(&cloud, &set, 1.0, None).unwrap();
        assert_eq!(data.interior().len(), 1);
        assert_eq!(data.interior()[0].truth.unwrap()[0], 0.0);
        assert_eq!(data.boundary().len(), 4, "all boundary-tagged points get constraints");
        let counts = data.counts();
        assert_eq!((counts.n_data, counts.n_int, counts.m_bc), (1, 1, 2 + 2 + 2 + 1));
        assert!(matches!(
            data.boundary()[0].constraint,
            BcConstraint::Velocity { u, v } if u == 1.0 && v == 0.0
        ));

        let bad_truth: Vec<[f64; 5]> = (0..6).map(|_| [0.0, 0.0, 0.0, 0.2, -0.3]).collect();
        let bad = ZonedPointCloud::new(points, Some(bad_truth), 180.0).unwrap();
        let mut data = TrainingData::new();
        let err = data.push_cloud(&bad, &set, 1.0, None).unwrap_err();
        assert!(matches!(err, TrainError::InvalidData { .. }));
    }
}
