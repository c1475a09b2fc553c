//! Repeated train/test experiments over several sample sizes and estimators.
//!
//! Each (size, repetition) pair draws its data from an RNG seeded by the
//! experiment seed and the pair's index, so every estimator sees the same
//! split and reruns are bit-identical. Timings go to a separate file so the
//! metric files stay reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{fmt_f64, load_table, write_csv, ResponseColumn, ScalingMode, ScalingSpec};
use super::synthetic::SyntheticGen;
use crate::baselines::{knn_cv_fit, nw_cv_fit, ols_fit, Kernel};
use crate::error::{DcfError, Result};
use crate::features::FeatureKind;
use crate::fit::{fit_dcf, FitConfig, FitResult, Theta2Mode};
use crate::model::{DcModel, Variant};
use crate::partition::Dataset;

pub const DEFAULT_REPETITIONS: usize = 5;
pub const DEFAULT_TEST_SIZE: usize = 1000;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Dcf { variant: Variant, kind: FeatureKind, theta2: Theta2Mode },
    Knn,
    Nw(Kernel),
    Ols,
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Self::Dcf { variant, kind, theta2 } => {
                let t = match theta2 {
                    Theta2Mode::Weak => "weak",
                    Theta2Mode::Strong => "strong",
                };
                format!("dcf-{}-{}-{t}", variant.name(), kind.name())
            }
            Self::Knn => "knn".into(),
            Self::Nw(k) => format!("nw-{}", k.name()),
            Self::Ols => "ols".into(),
        }
    }
}

/// Accepts `knn`, `ols`, `nw-gaussian` (`nw-g`), `nw-triweight` (`nw-t`) and
/// `dcf[-variant[-kind[-theta2]]]` with defaults symmetric, linf, strong.
impl FromStr for Estimator {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "knn" => return Ok(Self::Knn),
            "ols" => return Ok(Self::Ols),
            "nw-g" | "nw-gaussian" => return Ok(Self::Nw(Kernel::Gaussian)),
            "nw-t" | "nw-triweight" => return Ok(Self::Nw(Kernel::Triweight)),
            _ => {}
        }
        let rest =
            lower.strip_prefix("dcf").ok_or_else(|| DcfError::InvalidArgument(format!("unknown estimator '{s}'")))?;
        let parts: Vec<&str> = rest.split(['-', ':']).filter(|p| !p.is_empty()).collect();
        if parts.len() > 3 {
            return Err(DcfError::InvalidArgument(format!("unknown estimator '{s}'")));
        }
        let variant = parts.first().map_or(Ok(Variant::Symmetric), |p| p.parse())?;
        let kind = parts.get(1).map_or(Ok(FeatureKind::Linf), |p| p.parse())?;
        let theta2 = parts.get(2).map_or(Ok(Theta2Mode::Strong), |p| p.parse())?;
        variant.check_kind(kind)?;
        Ok(Self::Dcf { variant, kind, theta2 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticGen),
    Csv {
        path: PathBuf,
        #[serde(default)]
        response_col: Option<String>,
    },
}

fn default_reps() -> usize {
    DEFAULT_REPETITIONS
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_estimators() -> Vec<String> {
    vec!["dcf".into(), "knn".into(), "nw-gaussian".into(), "ols".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub scaling: ScalingMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<Vec<Estimator>> {
        if self.repetitions == 0 {
            return Err(DcfError::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return Err(DcfError::InvalidArgument("sizes must be non-empty and each at least 2".into()));
        }
        if self.test_size == 0 {
            return Err(DcfError::InvalidArgument("test_size must be positive".into()));
        }
        if let DataSource::Synthetic(g) = &self.source {
            g.validate()?;
        }
        if self.estimators.is_empty() {
            return Err(DcfError::InvalidArgument("no estimators given".into()));
        }
        self.estimators.iter().map(|e| e.parse()).collect()
    }
}

type Predictor = Box<dyn Fn(&Dataset) -> Result<Vec<f64>>>;

/// Outcome of one (estimator, size, repetition) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub estimator: String,
    pub n: usize,
    pub rep: usize,
    /// `None` on success, the error text otherwise.
    pub failure: Option<String>,
    /// Test MSE against the held-out responses, in original response units.
    pub mse: f64,
    /// Test MSE against the noiseless target for synthetic data; equals
    /// `mse` for CSV data.
    pub mse_clean: f64,
    pub cells: Option<usize>,
    pub cell_sizes: Vec<usize>,
    pub params_before: usize,
    pub params_after: usize,
    pub hyper: String,
    pub train_seconds: f64,
    pub predict_seconds_per_1000: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    pub n: usize,
    pub reps_ok: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mse_median: f64,
    pub mse_clean_mean: f64,
    pub mse_clean_std: f64,
    pub params_after_mean: f64,
    pub cells_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

/// Seed of the RNG stream for a (size index, repetition) pair.
pub fn stream_seed(seed: u64, size_index: usize, rep: usize) -> u64 {
    let mut z = seed ^ ((size_index as u64) << 32 | rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train set, test set and the reference values the test MSE is measured against.
struct Split {
    train: Dataset,
    test: Dataset,
    reference: Vec<f64>,
}

fn draw_split(source: &LoadedSource, n: usize, test_size: usize, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match source {
        LoadedSource::Synthetic(g) => {
            let (train, _) = g.sample(n, &mut rng)?;
            let (test, clean) = g.sample(test_size, &mut rng)?;
            Ok(Split { train, test, reference: clean })
        }
        LoadedSource::Table(all) => {
            if all.n() <= n {
                return Err(DcfError::Data(format!("dataset has {} rows, need more than n = {n}", all.n())));
            }
            let mut idx: Vec<usize> = (0..all.n()).collect();
            idx.shuffle(&mut rng);
            let train = all.subset(&idx[..n])?;
            let end = (n + test_size).min(all.n());
            let test = all.subset(&idx[n..end])?;
            let reference = test.y().to_vec();
            Ok(Split { train, test, reference })
        }
    }
}

enum LoadedSource {
    Synthetic(SyntheticGen),
    Table(Dataset),
}

/// Fits a DCF model on data scaled per `mode` and returns a model that
/// evaluates in raw coordinates.
pub fn fit_with_scaling(
    data: &Dataset,
    mode: ScalingMode,
    cfg: &FitConfig,
) -> Result<(DcModel, FitResult, ScalingSpec)> {
    let spec = ScalingSpec::fit(data, mode);
    let scaled = spec.apply(data);
    let cfg = FitConfig { standardize_internally: false, ..cfg.clone() };
    let res = fit_dcf(&scaled, &cfg)?;
    let model = res.final_model.clone().with_standardization(Some(spec.standardization()));
    Ok((model, res, spec))
}

fn mse_against(pred: &[f64], reference: &[f64]) -> f64 {
    pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / reference.len() as f64
}

fn run_cell(est: &Estimator, split: &Split, scaling: ScalingMode, folds: usize, seed: u64) -> Result<CellResult> {
    let d = split.train.d();
    let n = split.train.n();
    let spec = ScalingSpec::fit(&split.train, scaling);
    let train = spec.apply(&split.train);
    let test = spec.apply(&split.test);
    let mut out = CellResult {
        estimator: est.name(),
        n,
        rep: 0,
        failure: None,
        mse: f64::NAN,
        mse_clean: f64::NAN,
        cells: None,
        cell_sizes: Vec::new(),
        params_before: 0,
        params_after: 0,
        hyper: String::new(),
        train_seconds: 0.0,
        predict_seconds_per_1000: 0.0,
    };
    let folds = folds.min(n);
    let t0 = Instant::now();
    let predictor: Predictor = match est {
        Estimator::Dcf { variant, kind, theta2 } => {
            let cfg = FitConfig {
                variant: *variant,
                kind: *kind,
                theta2_mode: *theta2,
                seed,
                standardize_internally: false,
                ..FitConfig::default()
            };
            let res = fit_dcf(&train, &cfg)?;
            out.cells = Some(res.partition.k());
            out.cell_sizes = res.partition.cell_sizes();
            out.params_before = res.params_before_prune;
            out.params_after = res.params_after_prune;
            out.hyper = format!("theta1={}", fmt_f64(res.reg.theta1));
            let model = res.final_model;
            Box::new(move |data| model.predict(data))
        }
        Estimator::Knn => {
            let (m, _) = knn_cv_fit(&train, folds, seed)?;
            out.hyper = format!("k={}", m.k());
            out.params_before = n * (d + 1);
            out.params_after = out.params_before;
            Box::new(move |data| m.predict(data))
        }
        Estimator::Nw(kernel) => {
            let (m, _) = nw_cv_fit(&train, *kernel, folds, seed)?;
            out.hyper = format!("h={}", fmt_f64(m.bandwidth()));
            out.params_before = n * (d + 1) + 1;
            out.params_after = out.params_before;
            Box::new(move |data| m.predict(data))
        }
        Estimator::Ols => {
            let m = ols_fit(&train)?;
            out.params_before = d + 1;
            out.params_after = d + 1;
            Box::new(move |data| m.predict(data))
        }
    };
    out.train_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let pred_scaled = predictor(&test)?;
    out.predict_seconds_per_1000 = t1.elapsed().as_secs_f64() * 1000.0 / test.n().max(1) as f64;
    let pred: Vec<f64> = pred_scaled.iter().map(|v| v * spec.y_std + spec.y_mean).collect();
    out.mse = mse_against(&pred, split.test.y());
    out.mse_clean = mse_against(&pred, &split.reference);
    Ok(out)
}

fn sample_std(v: &[f64], mean: f64) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn summarize(cells: &[CellResult], estimators: &[Estimator], sizes: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for est in estimators {
        let name = est.name();
        for &n in sizes {
            let ok: Vec<&CellResult> =
                cells.iter().filter(|c| c.estimator == name && c.n == n && c.failure.is_none()).collect();
            let mse: Vec<f64> = ok.iter().map(|c| c.mse).collect();
            let clean: Vec<f64> = ok.iter().map(|c| c.mse_clean).collect();
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let mse_mean = mean(&mse);
            let clean_mean = mean(&clean);
            let params: Vec<f64> = ok.iter().map(|c| c.params_after as f64).collect();
            let cells_k: Vec<f64> = ok.iter().filter_map(|c| c.cells.map(|k| k as f64)).collect();
            rows.push(SummaryRow {
                estimator: name.clone(),
                n,
                reps_ok: ok.len(),
                mse_mean,
                mse_std: sample_std(&mse, mse_mean),
                mse_median: median(&mse),
                mse_clean_mean: clean_mean,
                mse_clean_std: sample_std(&clean, clean_mean),
                params_after_mean: mean(&params),
                cells_mean: mean(&cells_k),
            });
        }
    }
    rows
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let estimators = spec.validate()?;
    let source = match &spec.source {
        DataSource::Synthetic(g) => LoadedSource::Synthetic(g.clone()),
        DataSource::Csv { path, response_col } => {
            let col = response_col.as_deref().map_or(Ok(ResponseColumn::Last), str::parse)?;
            LoadedSource::Table(load_table(path)?.into_dataset(&col)?)
        }
    };
    let mut jobs = Vec::new();
    for (si, &n) in spec.sizes.iter().enumerate() {
        for rep in 0..spec.repetitions {
            for ei in 0..estimators.len() {
                jobs.push((si, n, rep, ei));
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(si, n, rep, ei)| {
            let seed = stream_seed(spec.seed, si, rep);
            let est = &estimators[ei];
            let result = draw_split(&source, n, spec.test_size, seed)
                .and_then(|split| run_cell(est, &split, spec.scaling, spec.folds, seed));
            match result {
                Ok(mut c) => {
                    c.rep = rep;
                    c
                }
                Err(e) => CellResult {
                    estimator: est.name(),
                    n,
                    rep,
                    failure: Some(e.to_string()),
                    mse: f64::NAN,
                    mse_clean: f64::NAN,
                    cells: None,
                    cell_sizes: Vec::new(),
                    params_before: 0,
                    params_after: 0,
                    hyper: String::new(),
                    train_seconds: 0.0,
                    predict_seconds_per_1000: 0.0,
                },
            }
        })
        .collect();
    let summary = summarize(&cells, &estimators, &spec.sizes);
    Ok(ExperimentReport { cells, summary })
}

/// Power-of-two bins `[2^b, 2^(b+1))` of the cell sizes.
pub fn size_histogram(sizes: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut bins: Vec<(usize, usize, usize)> = Vec::new();
    for &s in sizes {
        let b = if s == 0 { 0 } else { usize::BITS - 1 - s.leading_zeros() } as usize;
        let lo = if s == 0 { 0 } else { 1usize << b };
        let hi = if s == 0 { 1 } else { lo * 2 };
        match bins.iter_mut().find(|e| e.0 == lo) {
            Some(e) => e.2 += 1,
            None => bins.push((lo, hi, 1)),
        }
    }
    bins.sort();
    bins
}

/// Writes `metrics.csv`, `summary.csv`, `cells.csv` and `timings.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let opt = |v: Option<usize>| v.map_or(String::new(), |k| k.to_string());
    write_csv(
        fs::File::create(dir.join("metrics.csv"))?,
        &["estimator", "n", "rep", "status", "mse", "mse_clean", "cells", "params_before", "params_after", "hyper"],
        report.cells.iter().map(|c| {
            vec![
                c.estimator.clone(),
                c.n.to_string(),
                c.rep.to_string(),
                c.failure.as_ref().map_or("ok".to_string(), |m| format!("failed: {m}")),
                fmt_f64(c.mse),
                fmt_f64(c.mse_clean),
                opt(c.cells),
                c.params_before.to_string(),
                c.params_after.to_string(),
                c.hyper.clone(),
            ]
        }),
    )?;
    write_csv(
        fs::File::create(dir.join("summary.csv"))?,
        &[
            "estimator",
            "n",
            "reps_ok",
            "mse_mean",
            "mse_std_n1",
            "mse_median",
            "mse_clean_mean",
            "mse_clean_std_n1",
            "params_after_mean",
            "cells_mean",
        ],
        report.summary.iter().map(|s| {
            vec![
                s.estimator.clone(),
                s.n.to_string(),
                s.reps_ok.to_string(),
                fmt_f64(s.mse_mean),
                fmt_f64(s.mse_std),
                fmt_f64(s.mse_median),
                fmt_f64(s.mse_clean_mean),
                fmt_f64(s.mse_clean_std),
                fmt_f64(s.params_after_mean),
                fmt_f64(s.cells_mean),
            ]
        }),
    )?;
    let mut hist_rows = Vec::new();
    for c in &report.cells {
        for (lo, hi, count) in size_histogram(&c.cell_sizes) {
            hist_rows.push(vec![
                c.estimator.clone(),
                c.n.to_string(),
                c.rep.to_string(),
                lo.to_string(),
                hi.to_string(),
                count.to_string(),
            ]);
        }
    }
    write_csv(
        fs::File::create(dir.join("cells.csv"))?,
        &["estimator", "n", "rep", "size_lo", "size_hi_excl", "count"],
        hist_rows,
    )?;
    write_csv(
        fs::File::create(dir.join("timings.csv"))?,
        &["estimator", "n", "rep", "train_seconds", "predict_seconds_per_1000"],
        report.cells.iter().map(|c| {
            vec![
                c.estimator.clone(),
                c.n.to_string(),
                c.rep.to_string(),
                fmt_f64(c.train_seconds),
                fmt_f64(c.predict_seconds_per_1000),
            ]
        }),
    )?;
    Ok(())
}
