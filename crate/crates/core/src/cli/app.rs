//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::data::{fmt_f64, load_csv, load_table, write_csv, ResponseColumn, ScalingMode};
use super::demo::demo_figures;
use super::experiment::{fit_with_scaling, run_experiment, write_report, DataSource, ExperimentSpec};
use super::persist::{load_model, save_model};
use super::synthetic::{CovariateLaw, SyntheticGen, TargetId};
use crate::error::{DcfError, Result};
use crate::features::FeatureKind;
use crate::fit::{FitConfig, Theta2Mode};
use crate::model::{Body, DcModel, Variant};
use crate::partition::Dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dcf", version, about = "Delta-convex fitting for nonparametric regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on a CSV file and save it as JSON.
    Fit(FitArgs),
    /// Evaluate a saved model on the rows of a CSV file.
    Predict(PredictArgs),
    /// Run a repeated train/test experiment.
    Bench(BenchArgs),
    /// Write the one-dimensional demonstration grids.
    Demo(DemoArgs),
    /// Print parameter counts, pieces and slope statistics of a saved model.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Response column: 0-based index, header name, or "last".
    #[arg(long, default_value = "last")]
    pub response_col: String,
    #[arg(long, default_value = "symmetric")]
    pub variant: String,
    #[arg(long, default_value = "linf")]
    pub kind: String,
    #[arg(long, default_value = "strong")]
    pub theta2: String,
    #[arg(long, default_value = "std")]
    pub scaling: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rows with exactly the model's covariate count, or one extra response column.
    #[arg(long)]
    pub data: PathBuf,
    /// Column to drop when the file has one column more than the model needs.
    #[arg(long, default_value = "last")]
    pub response_col: String,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON experiment specification; overrides the synthetic flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "xsinx")]
    pub target: String,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value = "uniform")]
    pub law: String,
    #[arg(long, value_delimiter = ',', default_value = "256,1024")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = super::experiment::DEFAULT_REPETITIONS)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "dcf,knn,nw-gaussian,ols")]
    pub estimators: Vec<String>,
    #[arg(long, default_value = "std")]
    pub scaling: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = super::experiment::DEFAULT_TEST_SIZE)]
    pub test_size: usize,
    #[arg(long, default_value = "bench_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value = "demo_out")]
    pub out: PathBuf,
    /// Skip the model fits and write only the constructive approximations.
    #[arg(long)]
    pub no_fits: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Exit code for an error: usage problems, data problems, or solver failures.
pub fn exit_code(err: &DcfError) -> i32 {
    match err {
        DcfError::InvalidArgument(_) | DcfError::WrongVariant { .. } => EXIT_USAGE,
        DcfError::SolverAbort(_) | DcfError::ConstraintViolation(_) => EXIT_SOLVER,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing reports to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{e}");
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Demo(a) => {
            let entries = demo_figures(&a.out, !a.no_fits)?;
            writeln!(out, "wrote {} grid files and summary.csv to {}", entries.len(), a.out.display())?;
            for e in entries {
                writeln!(out, "{}\tfvu={}", e.file, fmt_f64(e.fvu_lower))?;
            }
            Ok(())
        }
        Command::Inspect(a) => cmd_inspect(&load_model(&a.model)?, out),
    }
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let kind: FeatureKind = a.kind.parse()?;
    let theta2: Theta2Mode = a.theta2.parse()?;
    let scaling: ScalingMode = a.scaling.parse()?;
    let col: ResponseColumn = a.response_col.parse()?;
    variant.check_kind(kind)?;
    let data = load_csv(&a.data, &col)?;
    let cfg = FitConfig { theta2_mode: theta2, seed: a.seed, ..FitConfig::new(variant, kind) };
    let (model, res, _) = fit_with_scaling(&data, scaling, &cfg)?;
    if let Some(abort) = res.initial_report.abort.as_ref() {
        return Err(DcfError::SolverAbort(abort.clone()));
    }
    save_model(&model, &a.out)?;
    let pred = model.predict(&data)?;
    let mse = pred.iter().zip(data.y()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / data.n() as f64;
    writeln!(out, "variant\t{}", variant.name())?;
    writeln!(out, "kind\t{}", kind.name())?;
    writeln!(out, "n\t{}\nd\t{}", data.n(), data.d())?;
    writeln!(out, "cells\t{}", res.partition.k())?;
    writeln!(out, "params_before_prune\t{}", res.params_before_prune)?;
    writeln!(out, "params_after_prune\t{}", res.params_after_prune)?;
    writeln!(out, "train_mse\t{}", fmt_f64(mse))?;
    writeln!(out, "model\t{}", a.out.display())?;
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let table = load_table(&a.data)?;
    let d = model.d();
    let data = if table.ncols == d {
        let x: Vec<f64> = table.rows.iter().flatten().copied().collect();
        Dataset::new(x, vec![0.0; table.rows.len()], d)?
    } else if table.ncols == d + 1 {
        table.into_dataset(&a.response_col.parse()?)?
    } else {
        return Err(DcfError::DimensionMismatch { expected: d, got: table.ncols });
    };
    let pred = model.predict(&data)?;
    let rows = pred.iter().map(|p| vec![fmt_f64(*p)]);
    match a.out {
        Some(path) => write_csv(std::fs::File::create(path)?, &["prediction"], rows),
        None => write_csv(out, &["prediction"], rows),
    }
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let spec: ExperimentSpec = match &a.spec {
        Some(path) => {
            if !path.exists() {
                return Err(DcfError::FileNotFound(path.clone()));
            }
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| DcfError::InvalidArgument(format!("bad experiment spec: {e}")))?
        }
        None => {
            let target: TargetId = a.target.parse()?;
            let law: CovariateLaw = a.law.parse()?;
            ExperimentSpec {
                source: DataSource::Synthetic(SyntheticGen::new(target, a.d, a.sigma, law)?),
                sizes: a.sizes.clone(),
                repetitions: a.reps,
                estimators: a.estimators.clone(),
                scaling: a.scaling.parse()?,
                seed: a.seed,
                test_size: a.test_size,
                folds: super::experiment::DEFAULT_FOLDS,
            }
        }
    };
    let report = run_experiment(&spec)?;
    write_report(&report, &a.out)?;
    writeln!(out, "estimator\tn\treps_ok\tmse_mean\tmse_std_n1\tmse_median")?;
    for s in &report.summary {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.estimator,
            s.n,
            s.reps_ok,
            fmt_f64(s.mse_mean),
            fmt_f64(s.mse_std),
            fmt_f64(s.mse_median)
        )?;
    }
    writeln!(out, "wrote metrics.csv, summary.csv, cells.csv, timings.csv to {}", a.out.display())?;
    Ok(())
}

fn cmd_inspect(model: &DcModel, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "variant\t{}", model.variant().name())?;
    writeln!(out, "kind\t{}", model.kind().name())?;
    writeln!(out, "d\t{}", model.d())?;
    match model.body() {
        Body::Max(c) => writeln!(out, "pieces\t{}", c.k())?,
        Body::Difference { pos, neg } => writeln!(out, "pieces\t{}\t{}", pos.k(), neg.k())?,
        Body::MaxMin(m) => writeln!(out, "pieces\t{}", m.k())?,
    }
    writeln!(out, "params\t{}", model.num_params())?;
    writeln!(out, "lip_stat\t{}", fmt_f64(model.lip_stat()))?;
    writeln!(out, "offset\t{}", fmt_f64(model.offset()))?;
    writeln!(out, "standardized\t{}", model.standardization().is_some())?;
    Ok(())
}
