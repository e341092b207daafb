//! Training schedule configuration and phase resolution.

use serde::{Deserialize, Serialize};

/// The three stages of the schedule: data-only warm start, PDE losses
/// without the ε equation, then the full loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmStart,
    PdeNoEps,
    Full,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::WarmStart => "warm_start",
            Phase::PdeNoEps => "pde_no_eps",
            Phase::Full => "full",
        }
    }
}

/// Knobs of the two-phase schedule and the optimizer.
///
/// Epoch indices are 0-based; `warmstart_end` and `eps_pde_start` are
/// exclusive/inclusive switch points: epoch `warmstart_end` is the first
/// epoch with PDE losses, epoch `eps_pde_start` the first with the ε
/// residual active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmstart_end: usize,
    pub eps_pde_start: usize,
    /// Interior points per gradient step; 0 = full batch.
    pub batch_size: usize,
    /// Initial Adam step size.
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_interval` steps.
    pub decay: f64,
    /// Steps between decays; 0 keeps the learning rate constant.
    pub decay_interval: usize,
    pub seed: u64,
    /// δ inside ln(· + δ) for the ε data loss.
    pub eps_log_floor: f64,
    /// Recalibrate λ₄ when the ε residual activates (else reuse the
    /// value frozen at the warm-start transition).
    pub recalibrate_lambda4: bool,
    /// Points per parallel work unit. Fixed chunking (independent of
    /// thread count) keeps gradient reductions bit-reproducible.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            warmstart_end: 200,  // 20% of epochs
            eps_pde_start: 400,  // 40% of epochs
            batch_size: 0,
            lr0: 0.001,
            decay: 0.95,
            decay_interval: 1, // one decay per step; full batch = one step per epoch
            seed: 0,
            eps_log_floor: 1e-8,
            recalibrate_lambda4: true,
            chunk_size: 32,
        }
    }
}

impl TrainConfig {
    /// A zero-epoch config is a valid no-op; otherwise the schedule must
    /// satisfy 0 < warmstart_end ≤ eps_pde_start ≤ epochs. (Equality
    /// lets a run stop before a later phase ever starts.)
    pub fn validate(&self) -> Result<(), crate::trainer::TrainError> {
        use crate::trainer::TrainError::InvalidConfig;
        let bad = |message: String| Err(InvalidConfig { message });
        if self.epochs > 0 {
            if self.warmstart_end == 0 {
                return bad("warmstart_end must be at least 1".into());
            }
            if self.warmstart_end > self.eps_pde_start {
                return bad(format!(
                    "warmstart_end ({}) must not exceed eps_pde_start ({})",
                    self.warmstart_end, self.eps_pde_start
                ));
            }
            if self.eps_pde_start > self.epochs {
                return bad(format!(
                    "eps_pde_start ({}) must not exceed epochs ({})",
                    self.eps_pde_start, self.epochs
                ));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !(self.eps_log_floor > 0.0) {
            return bad(format!("eps_log_floor must be positive, got {}", self.eps_log_floor));
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.warmstart_end {
            Phase::WarmStart
        } else if epoch < self.eps_pde_start {
            Phase::PdeNoEps
        } else {
            Phase::Full
        }
    }
}
