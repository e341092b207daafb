//! Per-epoch loss bookkeeping and its CSV export.

use super::Phase;

/// Every loss component of one evaluation, with the weights in force.
/// Weights are the *effective* ones: before calibration they are 0, and
/// λ₄ stays 0 until the ε residual activates, so the composed total is
/// always exactly the optimized quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_u: f64,
    pub l_v: f64,
    pub l_p: f64,
    pub l_k: f64,
    pub l_eps_data: f64,
    pub l_bc: f64,
    pub l_ns: f64,
    pub l_cont: f64,
    pub l_k_pde: f64,
    pub l_eps_pde: f64,
    pub lambda: [f64; 4],
}

impl LossBreakdown {
    /// The single place the total is composed:
    /// Σ data + L_BC + λ₁L_NS + λ₂L_Cont + λ₃L_k + λ₄L_ε.
    pub fn total(&self) -> f64 {
        self.l_u
            + self.l_v
            + self.l_p
            + self.l_k
            + self.l_eps_data
            + self.l_bc
            + self.lambda[0] * self.l_ns
            + self.lambda[1] * self.l_cont
            + self.lambda[2] * self.l_k_pde
            + self.lambda[3] * self.l_eps_pde
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_u,
            self.l_v,
            self.l_p,
            self.l_k,
            self.l_eps_data,
            self.l_bc,
            self.l_ns,
            self.l_cont,
            self.l_k_pde,
            self.l_eps_pde,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.lambda.iter().all(|v| v.is_finite())
    }
}

/// One history row: the losses at the start of an epoch (before that
/// epoch's parameter update) plus the learning rate of its first step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub losses: LossBreakdown,
    pub lr: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,phase,L_u,L_v,L_p,L_k,L_eps_data,L_BC,L_NS,L_Cont,L_k_pde,L_eps_pde,lambda1,lambda2,lambda3,lambda4,lr,total";

impl LossHistory {
    pub fn push(&mut self, record: LossRecord) {
        self.records.push(record);
    }

    /// Render as CSV. Floats use the shortest round-trip decimal form,
    /// so identical runs produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.losses;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.phase.name(),
                l.l_u,
                l.l_v,
                l.l_p,
                l.l_k,
                l.l_eps_data,
                l.l_bc,
                l.l_ns,
                l.l_cont,
                l.l_k_pde,
                l.l_eps_pde,
                l.lambda[0],
                l.lambda[1],
                l.lambda[2],
                l.lambda[3],
                r.lr,
                r.total,
            ));
        }
        out
    }
}
