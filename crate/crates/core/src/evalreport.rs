//! Error reporting against reference solutions: range-normalized error
//! fields, nearest-rank summary statistics, histograms, and multi-seed
//! prediction-variance studies, plus their CSV/SVG renderings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NetworkEnsemble;
use crate::physics::ModelConstants;
use crate::trainer::{train, TrainConfig, TrainError, TrainingData};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {context}")]
    Empty { context: &'static str },
    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch { left: usize, right: usize, context: &'static str },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("variance study needs at least two seeds, got {got}")]
    TooFewSeeds { got: usize },
    #[error("variance study needs at least two converged runs, got {got}")]
    TooFewConverged { got: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Floor for the normalization denominator when the truth field is
/// (numerically) constant over the evaluation set.
pub const RANGE_FLOOR: f64 = 1e-12;

/// Per-point errors of one variable, |pred − truth| / range(truth),
/// with the denominator recorded for the report metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedErrors {
    pub errors: Vec<f64>,
    /// max(truth) − min(truth) before flooring.
    pub range: f64,
    /// True when the denominator collapsed to the floor; errors then
    /// measure absolute differences in units of 1e-12 and the report
    /// flags the variable as degenerate.
    pub degenerate: bool,
}

pub fn normalized_error_field(pred: &[f64], truth: &[f64]) -> Result<NormalizedErrors, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
            context: "prediction vs truth",
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty { context: "error field" });
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite { context: "error field input" });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in truth {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let range = hi - lo;
    let degenerate = range < RANGE_FLOOR;
    let denom = range.max(RANGE_FLOOR);
    let errors = pred.iter().zip(truth).map(|(p, t)| (p - t).abs() / denom).collect();
    Ok(NormalizedErrors { errors, range, degenerate })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Nearest-rank percentile: the ⌈q·N⌉-th smallest value (1-indexed).
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty { context: "error statistics" });
    }
    if errors.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite { context: "error statistics input" });
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ErrorStats { mean, median: nearest_rank(&sorted, 0.5), p95: nearest_rank(&sorted, 0.95) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// n_bins + 1 edges spanning [0, max(errors)].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
}

/// Uniform-bin histogram over [0, max(errors)]. Bins own their right
/// edge (the first bin also owns 0), so the maximum lands in the last
/// bin and an interior edge value counts toward the bin it closes.
pub fn histogram(errors: &[f64], n_bins: usize) -> Result<Histogram, EvalError> {
    if n_bins == 0 {
        return Err(EvalError::NoBins);
    }
    if errors.is_empty() {
        return Err(EvalError::Empty { context: "histogram" });
    }
    if errors.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(EvalError::NonFinite { context: "histogram input" });
    }
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    let edges: Vec<f64> = (0..=n_bins).map(|i| max * i as f64 / n_bins as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for &e in errors {
        let idx = if max == 0.0 {
            0
        } else {
            let scaled = (e / max * n_bins as f64).ceil() as usize;
            scaled.saturating_sub(1).min(n_bins - 1)
        };
        counts[idx] += 1;
    }
    let n = errors.len() as f64;
    let fractions = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(Histogram { edges, counts, fractions })
}

/// One variable's slice of a report.
#[derive(Clone, Debug)]
pub struct VariableErrors {
    pub variable: &'static str,
    pub errors: Vec<f64>,
    pub range: f64,
    pub degenerate: bool,
    pub stats: ErrorStats,
}

/// Validation report for one evaluation set: normalized errors and
/// statistics of the velocity components and pressure.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub re: f64,
    /// Whether `re` lies inside the Reynolds range seen in training
    /// (interpolation) or outside it (extrapolation).
    pub in_training_range: bool,
    pub vars: Vec<VariableErrors>,
}

impl ErrorReport {
    /// Build from per-point predictions and truth rows ([u, v, p, k, ε];
    /// only u, v, p are reported, matching the reference metrics).
    pub fn from_predictions(
        re: f64,
        in_training_range: bool,
        pred: &[[f64; 5]],
        truth: &[[f64; 5]],
    ) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
                context: "prediction vs truth rows",
            });
        }
        let mut vars = Vec::with_capacity(3);
        for (col, variable) in [(0, "u"), (1, "v"), (2, "p")] {
            let p: Vec<f64> = pred.iter().map(|r| r[col]).collect();
            let t: Vec<f64> = truth.iter().map(|r| r[col]).collect();
            let nf = normalized_error_field(&p, &t)?;
            let stats = error_stats(&nf.errors)?;
            vars.push(VariableErrors {
                variable,
                errors: nf.errors,
                range: nf.range,
                degenerate: nf.degenerate,
                stats,
            });
        }
        Ok(ErrorReport { re, in_training_range, vars })
    }

    /// Summary table, one row per variable.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from("variable,mean,p95,median\n");
        for v in &self.vars {
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.variable, v.stats.mean, v.stats.p95, v.stats.median
            ));
        }
        out
    }

    /// Per-point error field aligned with the evaluation coordinates.
    pub fn field_csv(&self, xy: &[(f64, f64)]) -> Result<String, EvalError> {
        for v in &self.vars {
            if v.errors.len() != xy.len() {
                return Err(EvalError::LengthMismatch {
                    left: v.errors.len(),
                    right: xy.len(),
                    context: "error field vs coordinates",
                });
            }
        }
        let mut out = String::from("x,y,err_u,err_v,err_p\n");
        for (i, (x, y)) in xy.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                x, y, self.vars[0].errors[i], self.vars[1].errors[i], self.vars[2].errors[i]
            ));
        }
        Ok(out)
    }
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,fraction\n");
    for i in 0..h.counts.len() {
        out.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], h.fractions[i]));
    }
    out
}

/// Outcome of training the same problem from several weight
/// initializations and comparing the predictions pointwise.
#[derive(Clone, Debug)]
pub struct VarianceStudy {
    /// Seeds whose runs converged and entered the statistics.
    pub seeds_used: Vec<u64>,
    /// Diverged seeds with the abort reason; excluded from the map.
    pub excluded: Vec<(u64, String)>,
    /// Per evaluation point, per field (u, v, p, k, ε): sample variance
    /// (n − 1 denominator) of the converged predictions.
    pub variance: Vec<[f64; 5]>,
}

/// Train once per seed (only the weight initialization varies) and map
/// the pointwise spread of the resulting predictions.
pub fn variance_study(
    ens: &NetworkEnsemble,
    data: &TrainingData,
    consts: &ModelConstants,
    cfg: &TrainConfig,
    seeds: &[u64],
    eval_points: &[(f64, f64, f64)],
) -> Result<VarianceStudy, EvalError> {
    if seeds.len() < 2 {
        return Err(EvalError::TooFewSeeds { got: seeds.len() });
    }
    if eval_points.is_empty() {
        return Err(EvalError::Empty { context: "variance evaluation points" });
    }
    let mut seeds_used = Vec::new();
    let mut excluded = Vec::new();
    let mut runs: Vec<Vec<[f64; 5]>> = Vec::new();
    for &seed in seeds {
        let init = ens.init_params(seed);
        let outcome = train(ens, &init, data, consts, cfg)?;
        match outcome.abort {
            Some(reason) => excluded.push((seed, reason)),
            None => {
                let preds = eval_points
                    .iter()
                    .map(|&(x, y, re)| ens.eval_plain(&outcome.params, x, y, re))
                    .collect();
                runs.push(preds);
                seeds_used.push(seed);
            }
        }
    }
    let n = runs.len();
    if n < 2 {
        return Err(EvalError::TooFewConverged { got: n });
    }
    let mut variance = vec![[0.0f64; 5]; eval_points.len()];
    for (pt, var) in variance.iter_mut().enumerate() {
        for f in 0..5 {
            let mean = runs.iter().map(|r| r[pt][f]).sum::<f64>() / n as f64;
            let ss = runs.iter().map(|r| (r[pt][f] - mean).powi(2)).sum::<f64>();
            var[f] = ss / (n - 1) as f64;
        }
    }
    Ok(VarianceStudy { seeds_used, excluded, variance })
}

// ---------------------------------------------------------------------
// SVG rendering. Hand-rolled: the plots are bars and dots, not worth a
// plotting dependency.

fn svg_open(width: u32, height: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

/// Bar chart of bin fractions with the bin span on the x axis.
pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let (w, hgt) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 30.0, 40.0);
    let (pw, ph) = (w - ml - mr, hgt - mt - mb);
    let fmax = h.fractions.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut s = svg_open(w as u32, hgt as u32);
    s.push_str(&format!("<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{title}</text>\n", w / 2.0));
    let n = h.counts.len() as f64;
    for (i, &f) in h.fractions.iter().enumerate() {
        let bh = ph * f / fmax;
        let x = ml + pw * i as f64 / n;
        s.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"#4878a8\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            x,
            mt + ph - bh,
            pw / n,
            bh
        ));
    }
    // Axes with end labels.
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw
    ));
    s.push_str(&format!("<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n", mt + ph));
    s.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n",
        hgt - 18.0,
        h.edges[0]
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n",
        ml + pw,
        hgt - 18.0,
        h.edges[h.edges.len() - 1]
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
        ml - 4.0,
        mt + 10.0,
        fmax
    ));
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of per-point errors, colored from blue (low) to red
/// (high) relative to the maximum error in the set.
pub fn scatter_svg(xy: &[(f64, f64)], errors: &[f64], title: &str) -> String {
    let (w, hgt) = (640.0, 520.0);
    let (ml, mr, mt, mb) = (40.0, 20.0, 30.0, 30.0);
    let mut s = svg_open(w as u32, hgt as u32);
    s.push_str(&format!("<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{title}</text>\n", w / 2.0));
    if !xy.is_empty() && xy.len() == errors.len() {
        let (mut x0, mut x1, mut y0, mut y1) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in xy {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let (sx, sy) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
        let emax = errors.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
        for (&(x, y), &e) in xy.iter().zip(errors) {
            let px = ml + (w - ml - mr) * (x - x0) / sx;
            // SVG y grows downward; flip so the domain is upright.
            let py = mt + (hgt - mt - mb) * (1.0 - (y - y0) / sy);
            let t = (e / emax).clamp(0.0, 1.0);
            let r = (44.0 + t * (215.0 - 44.0)) as u8;
            let g = (123.0 - t * (123.0 - 25.0)) as u8;
            let b = (182.0 - t * (182.0 - 28.0)) as u8;
            s.push_str(&format!(
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"rgb({r},{g},{b})\"/>\n"
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}
