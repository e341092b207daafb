//! Command-line front end: dataset generation, training, evaluation,
//! seed-variance studies, and sampling previews.
//!
//! Exit codes: 0 on success, 1 when the inputs are at fault (bad
//! arguments, unreadable or inconsistent files, invalid configuration),
//! 2 when a run fails after the inputs checked out (non-finite losses,
//! unwritable outputs). Every run echoes its fully resolved
//! configuration — defaults included — to stderr, so any artifact can
//! be reproduced from the log alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use flowpinn::evalreport::{
    histogram, histogram_csv, histogram_svg, scatter_svg, variance_study, ErrorReport, EvalError,
};
use flowpinn::physics::ModelConstants;
use flowpinn::sampler::{load_point_cloud, zone_sample};
use flowpinn::trainer::{train, TrainError};
use flowpinn::workbench::{
    assemble_run, load_checkpoint, load_mms_spec, load_run_config, mms_generate, save_checkpoint,
    write_cloud_csv, write_sources_csv, CheckpointMeta,
};

#[derive(Parser)]
#[command(name = "flowpinn", version)]
#[command(about = "Train and evaluate physics-informed surrogates of incompressible turbulent flow")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate manufactured-solution datasets: one ground-truth cloud
    /// and one source-term table per listed Reynolds number.
    MmsGen {
        /// Spec TOML; missing keys fall back to documented defaults.
        spec: PathBuf,
        /// Directory the CSV files are written into.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train the five-field ensemble described by a run configuration.
    Train {
        /// Run TOML; missing keys fall back to documented defaults.
        config: PathBuf,
    },
    /// Evaluate a checkpoint against a cloud with ground truth.
    Evaluate {
        checkpoint: PathBuf,
        cloud: PathBuf,
        /// Directory for the stats, error-field, and histogram reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per seed (weight initialization only) and map the
    /// pointwise variance of the predictions.
    Variance {
        config: PathBuf,
        /// Comma-separated initialization seeds, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Show what a zone-capped draw would select from a cloud.
    SamplePreview {
        cloud: PathBuf,
        /// Comma-separated per-zone caps, one per zone.
        #[arg(long, value_delimiter = ',', required = true)]
        caps: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Which exit code a failure maps to.
enum Failure {
    /// The inputs are at fault: exit 1.
    Input(String),
    /// The run failed after the inputs checked out: exit 2.
    Runtime(String),
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Setup mistakes are the caller's; anything else broke mid-run.
fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::InvalidConfig { .. } | TrainError::InvalidData { .. } => input(e),
        _ => runtime(e),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Train(t) => train_failure(t),
        EvalError::NonFinite { .. } | EvalError::TooFewConverged { .. } => runtime(e),
        _ => input(e),
    }
}

fn log_config(label: &str, body: &str) {
    eprintln!("-- resolved {label} --");
    for line in body.lines() {
        eprintln!("{line}");
    }
    eprintln!("-- end {label} --");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits; anything else
            // is a usage error, which is an input problem.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::MmsGen { spec, out } => cmd_mms_gen(&spec, &out),
        Cmd::Train { config } => cmd_train(&config),
        Cmd::Evaluate { checkpoint, cloud, out } => cmd_evaluate(&checkpoint, &cloud, &out),
        Cmd::Variance { config, seeds } => cmd_variance(&config, &seeds),
        Cmd::SamplePreview { cloud, caps, seed } => cmd_sample_preview(&cloud, &caps, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_mms_gen(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let spec = load_mms_spec(spec_path).map_err(input)?;
    let consts = ModelConstants::default();
    log_config(
        "mms spec",
        &format!("{}out = {:?}\n", toml::to_string(&spec).map_err(runtime)?, out),
    );
    let datasets = mms_generate(&spec, &consts).map_err(runtime)?;
    fs::create_dir_all(out).map_err(runtime)?;
    for ds in &datasets {
        let re = ds.cloud.re();
        let cloud_path = out.join(format!("cloud_re{re}.csv"));
        let sources_path = out.join(format!("sources_re{re}.csv"));
        write_cloud_csv(&cloud_path, &ds.cloud).map_err(runtime)?;
        write_sources_csv(&sources_path, &ds.cloud, &ds.sources).map_err(runtime)?;
        println!(
            "wrote {} ({} points) and {}",
            cloud_path.display(),
            ds.cloud.len(),
            sources_path.display()
        );
    }
    Ok(())
}

fn cmd_train(config_path: &Path) -> Result<(), Failure> {
    let cfg = load_run_config(config_path).map_err(input)?;
    log_config("run config", &toml::to_string(&cfg).map_err(runtime)?);
    let run = assemble_run(&cfg).map_err(input)?;
    let init = run.ens.init_params(cfg.train.seed);
    let outcome = train(&run.ens, &init, &run.data, &cfg.constants, &cfg.train)
        .map_err(train_failure)?;

    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    fs::write(cfg.out_dir.join("history.csv"), outcome.history.to_csv()).map_err(runtime)?;
    fs::write(
        cfg.out_dir.join("calibrations.json"),
        serde_json::to_string_pretty(&outcome.calibrations).map_err(runtime)?,
    )
    .map_err(runtime)?;
    let lambda = outcome.history.records.last().map(|r| r.losses.lambda).unwrap_or([0.0; 4]);
    let meta = CheckpointMeta {
        constants: cfg.constants,
        scales: cfg.scales,
        provenance: run.provenance,
        lambda,
        epoch: outcome.history.records.len(),
    };
    save_checkpoint(&run.ens, &outcome.params, meta, &cfg.out_dir.join("checkpoint.json"))
        .map_err(runtime)?;

    if let Some(reason) = outcome.abort {
        return Err(Failure::Runtime(format!(
            "training aborted: {reason} (history and the last finite checkpoint are in {})",
            cfg.out_dir.display()
        )));
    }
    let last = outcome.history.records.last().expect("a completed run has history rows");
    println!(
        "trained {} epochs ({} phase), total loss {}; artifacts in {}",
        outcome.history.records.len(),
        last.phase.name(),
        last.total,
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, cloud_path: &Path, out: &Path) -> Result<(), Failure> {
    let cp = load_checkpoint(checkpoint).map_err(input)?;
    let cloud = load_point_cloud(cloud_path).map_err(input)?;
    let truth = cloud.truth().ok_or_else(|| {
        Failure::Input(format!("{} has no ground-truth columns", cloud_path.display()))
    })?;
    log_config(
        "evaluation",
        &format!(
            "checkpoint = {checkpoint:?}\ncloud = {cloud_path:?}\nout = {out:?}\n\
             re = {}\nsizes = {:?}\nepoch = {}\nlambda = {:?}",
            cloud.re(),
            cp.sizes,
            cp.epoch,
            cp.lambda
        ),
    );

    let ens = cp.ensemble();
    let params = cp.flat_params();
    let preds: Vec<[f64; 5]> = cloud
        .points()
        .iter()
        .map(|p| ens.eval_plain(&params, p.x, p.y, cloud.re()))
        .collect();
    // Interpolation vs extrapolation, read off the normalization the
    // checkpoint was trained with: inside the training span, R̂ ∈ [−1, 1].
    let in_range = cp.norm.normalize(0.0, 0.0, cloud.re())[2].abs() <= 1.0 + 1e-9;
    let report =
        ErrorReport::from_predictions(cloud.re(), in_range, &preds, truth).map_err(eval_failure)?;

    fs::create_dir_all(out).map_err(runtime)?;
    fs::write(out.join("stats.csv"), report.stats_csv()).map_err(runtime)?;
    let xy: Vec<(f64, f64)> = cloud.points().iter().map(|p| (p.x, p.y)).collect();
    fs::write(out.join("error_field.csv"), report.field_csv(&xy).map_err(eval_failure)?)
        .map_err(runtime)?;
    for v in &report.vars {
        let h = histogram(&v.errors, 20).map_err(eval_failure)?;
        let title = format!("{} error, Re = {}", v.variable, report.re);
        fs::write(out.join(format!("hist_{}.csv", v.variable)), histogram_csv(&h))
            .map_err(runtime)?;
        fs::write(out.join(format!("hist_{}.svg", v.variable)), histogram_svg(&h, &title))
            .map_err(runtime)?;
        fs::write(
            out.join(format!("error_{}.svg", v.variable)),
            scatter_svg(&xy, &v.errors, &title),
        )
        .map_err(runtime)?;
    }

    println!(
        "Re = {} ({})",
        report.re,
        if report.in_training_range { "interpolation" } else { "extrapolation" }
    );
    for v in &report.vars {
        println!(
            "{}: mean {:.6} p95 {:.6} median {:.6}{}",
            v.variable,
            v.stats.mean,
            v.stats.p95,
            v.stats.median,
            if v.degenerate { " (degenerate truth range)" } else { "" }
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_variance(config_path: &Path, seeds: &[u64]) -> Result<(), Failure> {
    let cfg = load_run_config(config_path).map_err(input)?;
    log_config(
        "run config",
        &format!("{}seeds = {seeds:?}\n", toml::to_string(&cfg).map_err(runtime)?),
    );
    let run = assemble_run(&cfg).map_err(input)?;
    let eval_points: Vec<(f64, f64, f64)> =
        run.data.interior().iter().map(|c| (c.x, c.y, c.re)).collect();
    let study = variance_study(&run.ens, &run.data, &cfg.constants, &cfg.train, seeds, &eval_points)
        .map_err(eval_failure)?;

    for (seed, reason) in &study.excluded {
        eprintln!("seed {seed} diverged and was excluded: {reason}");
    }
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let mut csv = String::from("x,y,Re,var_u,var_v,var_p,var_k,var_eps\n");
    for ((x, y, re), var) in eval_points.iter().zip(&study.variance) {
        writeln!(csv, "{},{},{},{},{},{},{},{}", x, y, re, var[0], var[1], var[2], var[3], var[4])
            .unwrap();
    }
    let path = cfg.out_dir.join("variance.csv");
    fs::write(&path, csv).map_err(runtime)?;
    println!(
        "variance over {} converged seeds ({:?}) written to {}",
        study.seeds_used.len(),
        study.seeds_used,
        path.display()
    );
    Ok(())
}

fn cmd_sample_preview(cloud_path: &Path, caps: &[usize], seed: u64) -> Result<(), Failure> {
    let cloud = load_point_cloud(cloud_path).map_err(input)?;
    if caps.len() != cloud.zone_count() {
        return Err(Failure::Input(format!(
            "{} caps given but {} has {} zones",
            caps.len(),
            cloud_path.display(),
            cloud.zone_count()
        )));
    }
    log_config(
        "sample preview",
        &format!("cloud = {cloud_path:?}\ncaps = {caps:?}\nseed = {seed}"),
    );
    let set = zone_sample(&cloud, caps, seed);
    let zones = cloud.zone_count();
    let mut available = vec![0usize; zones];
    for p in cloud.points() {
        available[p.zone] += 1;
    }
    let mut drawn = vec![0usize; zones];
    for &i in &set.indices {
        drawn[cloud.points()[i].zone] += 1;
    }
    println!("zone,available,cap,drawn");
    for z in 0..zones {
        println!("{z},{},{},{}", available[z], caps[z], drawn[z]);
    }
    println!("total selected: {} of {}", set.indices.len(), cloud.len());
    Ok(())
}
