//! Reference estimators: k-nearest neighbours, Nadaraya-Watson kernel
//! regression, ordinary least squares, and seeded k-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};
use crate::partition::{sq_dist, Dataset};

/// Upper bound on the number of candidate `k` values tried by CV.
pub const KNN_GRID_MAX: usize = 50;
pub const NW_GRID_LEN: usize = 100;
pub const OLS_RIDGE: f64 = 1e-10;

/// Indices of the training rows sorted by distance to `x`, ties to the smaller index.
fn neighbour_order(train: &Dataset, x: &[f64]) -> Vec<(f64, usize)> {
    let mut order: Vec<(f64, usize)> = train.rows().enumerate().map(|(i, r)| (sq_dist(r, x), i)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    train: Dataset,
    k: usize,
}

impl KnnModel {
    pub fn new(train: Dataset, k: usize) -> Result<Self> {
        if k == 0 || k > train.n() {
            return Err(DcfError::InvalidArgument(format!("k must be in 1..={}, got {k}", train.n())));
        }
        Ok(Self { train, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let mut order: Vec<(f64, usize)> = self.train.rows().enumerate().map(|(i, r)| (sq_dist(r, x), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < order.len() {
            order.select_nth_unstable_by(self.k - 1, cmp);
        }
        let y = self.train.y();
        order[..self.k].iter().map(|&(_, i)| y[i]).sum::<f64>() / self.k as f64
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dims(self.train.d(), data.d())?;
        Ok(data.rows().collect::<Vec<_>>().par_iter().map(|r| self.predict_one(r)).collect())
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DcfError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Candidate `k` values `1..=min(floor(ln n * n^(2/(2+d))), n-1)`, thinned to
/// at most [`KNN_GRID_MAX`] log-spaced integers.
pub fn knn_cv_grid(n: usize, d: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(DcfError::InvalidArgument("k-NN grid needs n >= 2".into()));
    }
    let cap = knn_cap(n, d);
    if cap <= KNN_GRID_MAX {
        return Ok((1..=cap).collect());
    }
    let ratio = (cap as f64).ln() / (KNN_GRID_MAX - 1) as f64;
    let mut grid: Vec<usize> =
        (0..KNN_GRID_MAX).map(|i| ((i as f64 * ratio).exp().round() as usize).clamp(1, cap)).collect();
    grid[KNN_GRID_MAX - 1] = cap;
    grid.dedup();
    Ok(grid)
}

pub fn knn_cap(n: usize, d: usize) -> usize {
    let nf = n as f64;
    let raw = (nf.ln() * nf.powf(2.0 / (2.0 + d as f64))).floor();
    (raw.max(1.0) as usize).min(n.saturating_sub(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Triweight,
}

impl Kernel {
    /// Kernel profile at `u = distance / h`.
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
            Kernel::Triweight => {
                if u <= 1.0 {
                    let t = 1.0 - u * u;
                    t * t * t
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Triweight => "triweight",
        }
    }
}

/// Kernel-weighted mean of the responses given squared distances to all
/// training rows; falls back to the nearest row when every weight is zero.
fn nw_from_sq_dists(kernel: Kernel, h: f64, sq: &[f64], y: &[f64]) -> f64 {
    let inv = 1.0 / (h * h);
    // The Gaussian is shifted by the smallest exponent; the ratio is unchanged
    // but far queries no longer underflow to 0/0.
    let shift = match kernel {
        Kernel::Gaussian => sq.iter().copied().fold(f64::INFINITY, f64::min) * inv,
        Kernel::Triweight => 0.0,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (&s, &yi) in sq.iter().zip(y) {
        let w = match kernel {
            Kernel::Gaussian => (-0.5 * (s * inv - shift)).exp(),
            Kernel::Triweight => kernel.weight((s * inv).sqrt()),
        };
        num += w * yi;
        den += w;
    }
    if den > 0.0 {
        (num / den)
            .clamp(y.iter().copied().fold(f64::INFINITY, f64::min), y.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    } else {
        let mut best = 0;
        for (i, &s) in sq.iter().enumerate() {
            if s < sq[best] {
                best = i;
            }
        }
        y[best]
    }
}

#[derive(Debug, Clone)]
pub struct NwModel {
    train: Dataset,
    kernel: Kernel,
    bandwidth: f64,
}

impl NwModel {
    pub fn new(train: Dataset, kernel: Kernel, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(DcfError::InvalidArgument("bandwidth must be positive".into()));
        }
        Ok(Self { train, kernel, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let sq: Vec<f64> = self.train.rows().map(|r| sq_dist(r, x)).collect();
        nw_from_sq_dists(self.kernel, self.bandwidth, &sq, self.train.y())
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dims(self.train.d(), data.d())?;
        Ok(data.rows().collect::<Vec<_>>().par_iter().map(|r| self.predict_one(r)).collect())
    }
}

/// Bandwidth cap `(2 r_x)^(d/(2+d)) * (r_y^2 / n)^(1/(2+d))`.
pub fn nw_bandwidth_cap(r_x: f64, r_y: f64, n: usize, d: usize) -> f64 {
    let df = d as f64;
    (2.0 * r_x).powf(df / (2.0 + df)) * (r_y * r_y / n as f64).powf(1.0 / (2.0 + df))
}

/// `j / 100 * cap` for `j = 1..=100`.
pub fn nw_cv_grid(r_x: f64, r_y: f64, n: usize, d: usize) -> Result<Vec<f64>> {
    if !(r_x > 0.0 && r_y > 0.0) || n == 0 || d == 0 {
        return Err(DcfError::InvalidArgument("bandwidth grid needs r_x, r_y, n, d > 0".into()));
    }
    let cap = nw_bandwidth_cap(r_x, r_y, n, d);
    Ok((1..=NW_GRID_LEN).map(|j| j as f64 / NW_GRID_LEN as f64 * cap).collect())
}

/// Affine least-squares fit `intercept + slope . x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl OlsModel {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dims(self.slope.len(), data.d())?;
        Ok(data.rows().map(|r| self.predict_one(r)).collect())
    }
}

/// Solves the ridge-stabilized normal equations on centered data, so the
/// intercept is never shrunk and rank-deficient designs get the minimum-norm slope.
pub fn ols_fit(data: &Dataset) -> Result<OlsModel> {
    let n = data.n();
    let d = data.d();
    if n == 0 {
        return Err(DcfError::EmptyDataset);
    }
    let mut mean = vec![0.0; d];
    for r in data.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let y_mean = data.y_mean();
    let xc = DMatrix::from_fn(n, d, |i, j| data.row(i)[j] - mean[j]);
    let yc = DVector::from_iterator(n, data.y().iter().map(|y| y - y_mean));
    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += OLS_RIDGE;
    }
    let rhs = xc.transpose() * yc;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| DcfError::SolverAbort(format!("least squares failed: {e}")))?,
    };
    let slope: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - slope.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(OlsModel { intercept, slope })
}

/// Seeded shuffle followed by a contiguous split into `folds` groups.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(DcfError::InvalidArgument(format!("need 2 <= folds <= n, got folds={folds}, n={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..folds).map(|f| idx[f * n / folds..(f + 1) * n / folds].to_vec()).collect())
}

fn split(data: &Dataset, folds: &[Vec<usize>], f: usize) -> Result<(Dataset, Dataset)> {
    let train: Vec<usize> =
        folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
    Ok((data.subset(&train)?, data.subset(&folds[f])?))
}

/// Outcome of a grid search: the chosen value and the mean validation MSE per grid entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<H> {
    pub best: H,
    pub best_index: usize,
    pub scores: Vec<f64>,
}

fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Cross-validation where one call scores every grid value on a fold, so
/// estimators can share work (neighbour orders, distance matrices) across values.
pub fn kfold_cv_batched<H: Copy + Send + Sync>(
    data: &Dataset,
    folds: usize,
    grid: &[H],
    seed: u64,
    score_fold: impl Fn(&Dataset, &Dataset, &[H]) -> Result<Vec<f64>> + Sync,
) -> Result<CvResult<H>> {
    if grid.is_empty() {
        return Err(DcfError::InvalidArgument("empty hyperparameter grid".into()));
    }
    let parts = fold_indices(data.n(), folds, seed)?;
    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (train, val) = split(data, &parts, f)?;
            let s = score_fold(&train, &val, grid)?;
            if s.len() != grid.len() {
                return Err(DcfError::DimensionMismatch { expected: grid.len(), got: s.len() });
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = (0..grid.len()).map(|g| per_fold.iter().map(|s| s[g]).sum::<f64>() / folds as f64).collect();
    let best_index = argmin_first(&scores);
    Ok(CvResult { best: grid[best_index], best_index, scores })
}

/// Cross-validation with a closure returning the validation MSE for one value.
pub fn kfold_cv<H: Copy + Send + Sync>(
    data: &Dataset,
    folds: usize,
    grid: &[H],
    seed: u64,
    fit_score: impl Fn(&Dataset, &Dataset, H) -> Result<f64> + Sync,
) -> Result<CvResult<H>> {
    kfold_cv_batched(data, folds, grid, seed, |train, val, g| g.par_iter().map(|&h| fit_score(train, val, h)).collect())
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len().max(1) as f64
}

/// Selects `k` by CV over [`knn_cv_grid`] and refits on all of `data`.
pub fn knn_cv_fit(data: &Dataset, folds: usize, seed: u64) -> Result<(KnnModel, CvResult<usize>)> {
    let grid = knn_cv_grid(data.n(), data.d())?;
    let cv = kfold_cv_batched(data, folds, &grid, seed, |train, val, g| {
        let y = train.y();
        let kmax = g.iter().copied().max().unwrap_or(1).min(train.n());
        let sums: Vec<Vec<f64>> = val
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| {
                let order = neighbour_order(train, r);
                let mut acc = 0.0;
                order[..kmax]
                    .iter()
                    .map(|&(_, i)| {
                        acc += y[i];
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(g.iter()
            .map(|&k| {
                let k = k.min(train.n());
                let pred: Vec<f64> = sums.iter().map(|s| s[k - 1] / k as f64).collect();
                mse(&pred, val.y())
            })
            .collect())
    })?;
    Ok((KnnModel::new(data.clone(), cv.best.min(data.n()))?, cv))
}

/// Selects the bandwidth by CV over [`nw_cv_grid`] and refits on all of `data`.
pub fn nw_cv_fit(data: &Dataset, kernel: Kernel, folds: usize, seed: u64) -> Result<(NwModel, CvResult<f64>)> {
    let (r_x, r_y) = crate::partition::data_radii(data)?;
    let grid = nw_cv_grid(r_x.max(f64::MIN_POSITIVE), r_y.max(f64::MIN_POSITIVE), data.n(), data.d())?;
    let cv = kfold_cv_batched(data, folds, &grid, seed, |train, val, g| {
        let dists: Vec<Vec<f64>> = val.rows().map(|r| train.rows().map(|t| sq_dist(r, t)).collect()).collect();
        Ok(g.par_iter()
            .map(|&h| {
                let pred: Vec<f64> = dists.iter().map(|sq| nw_from_sq_dists(kernel, h, sq, train.y())).collect();
                mse(&pred, val.y())
            })
            .collect())
    })?;
    Ok((NwModel::new(data.clone(), kernel, cv.best)?, cv))
}
