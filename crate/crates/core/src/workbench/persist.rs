//! Artifact persistence: cloud and source-term CSVs, checkpoints, and
//! the training-run configuration, plus the assembly step that turns a
//! configuration into an ensemble and a training set.
//!
//! Floats are written with the shortest round-tripping decimal form, so
//! every file regenerates bit-identical values on load.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::net::{DenseNet, FlowField, InputNorm, NetworkEnsemble};
use crate::physics::{ModelConstants, RefScales, SourceTerms};
use crate::sampler::{
    default_caps, load_point_cloud, zone_sample, SampleProvenance, ZonedPointCloud, HEADER_BARE,
    HEADER_TRUTH,
};
use crate::trainer::{TrainConfig, TrainingData};

use super::WorkbenchError;

/// Column order of a source-term CSV. Rows align 1:1 with the cloud
/// file they accompany; the mass source is omitted because it is
/// identically zero for streamfunction-built data.
pub const SOURCE_HEADER: [&str; 6] = ["x", "y", "s_momx", "s_momy", "s_k", "s_eps"];

/// Write a cloud (with ground truth when present) in the format
/// [`load_point_cloud`] reads.
pub fn write_cloud_csv(path: &Path, cloud: &ZonedPointCloud) -> Result<(), WorkbenchError> {
    let mut out = String::new();
    match cloud.truth() {
        Some(_) => writeln!(out, "{}", HEADER_TRUTH.join(",")).unwrap(),
        None => writeln!(out, "{}", HEADER_BARE.join(",")).unwrap(),
    }
    let re = cloud.re();
    for (i, p) in cloud.points().iter().enumerate() {
        write!(out, "{},{},{},{},{}", p.x, p.y, p.zone, p.tag, re).unwrap();
        if let Some(truth) = cloud.truth() {
            let [u, v, pr, k, eps] = truth[i];
            write!(out, ",{u},{v},{pr},{k},{eps}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write per-point source terms aligned with the given cloud.
pub fn write_sources_csv(
    path: &Path,
    cloud: &ZonedPointCloud,
    sources: &[SourceTerms],
) -> Result<(), WorkbenchError> {
    if sources.len() != cloud.len() {
        return Err(WorkbenchError::Validation {
            message: format!(
                "{} source rows for a cloud of {} points",
                sources.len(),
                cloud.len()
            ),
        });
    }
    let mut out = String::new();
    writeln!(out, "{}", SOURCE_HEADER.join(",")).unwrap();
    for (p, s) in cloud.points().iter().zip(sources) {
        writeln!(out, "{},{},{},{},{},{}", p.x, p.y, s.s_momx, s.s_momy, s.s_k, s.s_eps).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load source terms and check them against the cloud they claim to
/// describe: same row count, same coordinates row by row. Coordinates
/// must match exactly — both files are written from the same values
/// with round-tripping formatting, so any difference means the files
/// were not generated together.
pub fn load_sources_csv(
    path: &Path,
    cloud: &ZonedPointCloud,
) -> Result<Vec<SourceTerms>, WorkbenchError> {
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if !headers.iter().eq(SOURCE_HEADER) {
        return Err(WorkbenchError::Validation {
            message: format!(
                "bad source header `{}` (expected `{}`)",
                headers.iter().collect::<Vec<_>>().join(","),
                SOURCE_HEADER.join(",")
            ),
        });
    }
    let mut sources = Vec::with_capacity(cloud.len());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, after the header line
        if i >= cloud.len() {
            return Err(WorkbenchError::Validation {
                message: format!("row {row}: more source rows than the cloud's {} points", cloud.len()),
            });
        }
        if record.len() != SOURCE_HEADER.len() {
            return Err(WorkbenchError::Validation {
                message: format!("row {row}: expected {} fields, got {}", SOURCE_HEADER.len(), record.len()),
            });
        }
        let mut vals = [0.0f64; 6];
        for (j, field) in record.iter().enumerate() {
            vals[j] = field.parse().map_err(|_| WorkbenchError::Validation {
                message: format!("row {row}: `{field}` is not a number"),
            })?;
        }
        let point = cloud.points()[i];
        if vals[0] != point.x || vals[1] != point.y {
            return Err(WorkbenchError::Validation {
                message: format!(
                    "row {row} is for ({}, {}) but cloud point {i} is at ({}, {})",
                    vals[0], vals[1], point.x, point.y
                ),
            });
        }
        let s = SourceTerms {
            s_mass: 0.0,
            s_momx: vals[2],
            s_momy: vals[3],
            s_k: vals[4],
            s_eps: vals[5],
        };
        if !s.is_finite() {
            return Err(WorkbenchError::Validation {
                message: format!("row {row}: non-finite source term"),
            });
        }
        sources.push(s);
    }
    if sources.len() != cloud.len() {
        return Err(WorkbenchError::Validation {
            message: format!(
                "{} source rows for a cloud of {} points",
                sources.len(),
                cloud.len()
            ),
        });
    }
    Ok(sources)
}

/// Bumped whenever the checkpoint schema changes shape.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reload a trained ensemble and reproduce its
/// predictions bit-for-bit, plus the provenance to re-derive its
/// training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// Layer sizes shared by the five field networks.
    pub sizes: Vec<usize>,
    /// One flat parameter vector per field, in (u, v, p, k, ε) order.
    pub params: Vec<Vec<f64>>,
    pub norm: InputNorm,
    pub constants: ModelConstants,
    pub scales: RefScales,
    /// One entry per training cloud, in configuration order.
    pub provenance: Vec<SampleProvenance>,
    /// PDE loss weights in effect when the checkpoint was written.
    pub lambda: [f64; 4],
    /// Epochs completed.
    pub epoch: usize,
}

/// Run metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub constants: ModelConstants,
    pub scales: RefScales,
    pub provenance: Vec<SampleProvenance>,
    pub lambda: [f64; 4],
    pub epoch: usize,
}

impl Checkpoint {
    /// Rebuild the ensemble this checkpoint describes (parameters are
    /// passed separately, see [`Checkpoint::flat_params`]).
    pub fn ensemble(&self) -> NetworkEnsemble {
        NetworkEnsemble::from_parts(DenseNet::new(&self.sizes), self.norm)
    }

    /// The five per-net vectors as the single flat vector the trainer
    /// and evaluators work with.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.concat()
    }
}

/// Serialize the ensemble and its parameters to a single JSON file.
/// JSON numbers are written in shortest round-trip form, which makes
/// the round-trip bit-exact.
pub fn save_checkpoint(
    ens: &NetworkEnsemble,
    params: &[f64],
    meta: CheckpointMeta,
    path: &Path,
) -> Result<Checkpoint, WorkbenchError> {
    if params.len() != ens.total_params() {
        return Err(WorkbenchError::Validation {
            message: format!(
                "parameter vector has {} entries but the ensemble takes {}",
                params.len(),
                ens.total_params()
            ),
        });
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(WorkbenchError::Validation {
            message: "refusing to write a checkpoint with non-finite parameters".into(),
        });
    }
    let per_net = FlowField::ALL
        .iter()
        .map(|&f| params[ens.param_range(f)].to_vec())
        .collect();
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        sizes: ens.net().sizes().to_vec(),
        params: per_net,
        norm: ens.norm,
        constants: meta.constants,
        scales: meta.scales,
        provenance: meta.provenance,
        lambda: meta.lambda,
        epoch: meta.epoch,
    };
    fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
    Ok(checkpoint)
}

/// Version probe decoded before the full schema so that a file from a
/// different format generation reports its version rather than a
/// field-by-field parse failure.
#[derive(Deserialize)]
struct VersionProbe {
    #[serde(default)]
    version: u32,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, WorkbenchError> {
    let text = fs::read_to_string(path)?;
    let corrupt = |message: String| WorkbenchError::Corrupt { message };
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(WorkbenchError::Version {
            found: probe.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let checkpoint: Checkpoint =
        serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let sizes = &checkpoint.sizes;
    if sizes.len() < 2
        || sizes.first() != Some(&3)
        || sizes.last() != Some(&1)
        || sizes.iter().any(|&s| s == 0)
    {
        return Err(corrupt(format!(
            "layer sizes {sizes:?} do not describe (x̂, ŷ, R̂) → scalar networks"
        )));
    }
    let per_net = DenseNet::new(sizes).param_count();
    if checkpoint.params.len() != FlowField::ALL.len()
        || checkpoint.params.iter().any(|p| p.len() != per_net)
    {
        return Err(corrupt(format!(
            "expected {} parameter vectors of {per_net} entries each",
            FlowField::ALL.len()
        )));
    }
    if checkpoint.params.iter().flatten().any(|p| !p.is_finite())
        || checkpoint.lambda.iter().any(|l| !l.is_finite())
    {
        return Err(corrupt("non-finite parameter or weight".into()));
    }
    Ok(checkpoint)
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}

fn unit_scales() -> RefScales {
    RefScales { length: 1.0, u_inlet: 1.0, rho: 1.0, mu: 1.0 }
}

/// One training run: which clouds to learn from, the network shape,
/// the optimizer schedule, and where artifacts go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Point-cloud CSVs, one Reynolds number each, all with ground
    /// truth columns.
    pub clouds: Vec<PathBuf>,
    /// Source-term CSVs aligned 1:1 with `clouds`; empty means the
    /// physical system (all sources zero).
    pub sources: Vec<PathBuf>,
    /// Hidden-layer widths shared by the five field networks.
    pub hidden: Vec<usize>,
    /// Training points drawn per cloud; 0 keeps every point.
    pub sample_budget: usize,
    /// Inlet/freestream speed used for boundary pins, when clouds carry
    /// boundary-tagged points.
    pub inlet_velocity: f64,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub constants: ModelConstants,
    /// Reference scales recorded in the checkpoint. Unit scales state
    /// that the cloud data is already nondimensional.
    pub scales: RefScales,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            clouds: Vec::new(),
            sources: Vec::new(),
            hidden: default_hidden(),
            sample_budget: 0,
            inlet_velocity: 1.0,
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            constants: ModelConstants::default(),
            scales: unit_scales(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), WorkbenchError> {
        if self.clouds.is_empty() {
            return Err(WorkbenchError::Validation {
                message: "at least one cloud file is required".into(),
            });
        }
        if !self.sources.is_empty() && self.sources.len() != self.clouds.len() {
            return Err(WorkbenchError::Validation {
                message: format!(
                    "{} source files for {} clouds (give one per cloud, or none)",
                    self.sources.len(),
                    self.clouds.len()
                ),
            });
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(WorkbenchError::Validation {
                message: "hidden layer widths must be nonzero".into(),
            });
        }
        if !self.inlet_velocity.is_finite() {
            return Err(WorkbenchError::Validation {
                message: format!("inlet_velocity must be finite, got {}", self.inlet_velocity),
            });
        }
        self.train.validate()?;
        self.constants.validate()?;
        // Deserialization bypasses the RefScales constructor; re-run
        // its positivity checks.
        RefScales::new(self.scales.length, self.scales.u_inlet, self.scales.rho, self.scales.mu)?;
        Ok(())
    }
}

/// Load a run configuration from a TOML file; missing keys fall back
/// to defaults, unknown keys are errors.
pub fn load_run_config(path: &Path) -> Result<RunConfig, WorkbenchError> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// A run's moving parts, loaded and sampled: the (untrained) ensemble
/// normalized over the clouds' joint domain, the assembled training
/// data, and the per-cloud sampling provenance.
#[derive(Clone, Debug)]
pub struct AssembledRun {
    pub ens: NetworkEnsemble,
    pub data: TrainingData,
    pub provenance: Vec<SampleProvenance>,
    /// (lo, hi) over the clouds' Reynolds numbers.
    pub re_range: (f64, f64),
}

/// Load every cloud (and source table), fit the input normalization to
/// their joint bounding box and Re span, and draw the training sets.
pub fn assemble_run(cfg: &RunConfig) -> Result<AssembledRun, WorkbenchError> {
    cfg.validate()?;
    let mut clouds = Vec::with_capacity(cfg.clouds.len());
    for path in &cfg.clouds {
        let cloud = load_point_cloud(path)?;
        if cloud.truth().is_none() {
            return Err(WorkbenchError::Validation {
                message: format!("cloud {} has no ground-truth columns", path.display()),
            });
        }
        clouds.push(cloud);
    }
    let mut source_rows: Vec<Option<Vec<SourceTerms>>> = vec![None; clouds.len()];
    for (i, path) in cfg.sources.iter().enumerate() {
        source_rows[i] = Some(load_sources_csv(path, &clouds[i])?);
    }

    let mut x = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y = (f64::INFINITY, f64::NEG_INFINITY);
    let mut re = (f64::INFINITY, f64::NEG_INFINITY);
    for cloud in &clouds {
        let (xr, yr) = cloud.bounding_box();
        x = (x.0.min(xr.0), x.1.max(xr.1));
        y = (y.0.min(yr.0), y.1.max(yr.1));
        re = (re.0.min(cloud.re()), re.1.max(cloud.re()));
    }
    let ens = NetworkEnsemble::new(&cfg.hidden, InputNorm::from_ranges(x, y, re));

    let mut data = TrainingData::new();
    let mut provenance = Vec::with_capacity(clouds.len());
    for (cloud, sources) in clouds.iter().zip(&source_rows) {
        let budget = if cfg.sample_budget == 0 { cloud.len() } else { cfg.sample_budget };
        let caps = default_caps(cloud, budget);
        let set = zone_sample(cloud, &caps, cfg.train.seed);
        data.push_cloud(cloud, &set, cfg.inlet_velocity, sources.as_deref())?;
        provenance.push(set.provenance);
    }
    Ok(AssembledRun { ens, data, provenance, re_range: re })
}
