//! Adaptive farthest-point clustering and Voronoi cell assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};

/// Covariate rows (row-major, `n x d`) with their responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(DcfError::InvalidDimension("covariate dimension must be at least 1".into()));
        }
        if y.is_empty() {
            return Err(DcfError::EmptyDataset);
        }
        if x.len() != y.len() * d {
            return Err(DcfError::DimensionMismatch { expected: y.len() * d, got: x.len() });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(DcfError::Data(format!("non-finite covariate at row {}, column {}", pos / d, pos % d)));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(DcfError::Data(format!("non-finite response at row {pos}")));
        }
        Ok(Self { x, y, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or(DcfError::EmptyDataset)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(DcfError::DimensionMismatch { expected: d, got: bad.len() });
        }
        if rows.len() != y.len() {
            return Err(DcfError::DimensionMismatch { expected: rows.len(), got: y.len() });
        }
        Self::new(rows.concat(), y, d)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.x.chunks_exact(self.d)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n() as f64
    }

    /// Same covariates, responses replaced.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.d)
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self::new(x, y, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub centers: Vec<Vec<f64>>,
    pub center_source_rows: Vec<usize>,
    pub assignment: Vec<usize>,
    pub eps_n: f64,
    pub r_x: f64,
    pub r_y: f64,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Number of training points per cell.
    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.assignment {
            sizes[l] += 1;
        }
        sizes
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Covariate radius around the mean and response radius around the mean.
pub fn data_radii(dataset: &Dataset) -> Result<(f64, f64)> {
    let n = dataset.n();
    if n == 0 {
        return Err(DcfError::EmptyDataset);
    }
    let d = dataset.d();
    let mut mean = vec![0.0; d];
    for row in dataset.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let r_x = dataset.rows().map(|r| sq_dist(r, &mean)).fold(0.0, f64::max).sqrt();
    let y_mean = dataset.y_mean();
    let r_y = dataset.y().iter().map(|y| (y - y_mean).abs()).fold(0.0, f64::max);
    Ok((r_x, r_y))
}

/// Partition size limit `min{n (eps / r_x)^2, n^(d / (2 + d))}`.
///
/// Returns 0 when `eps == 0` or `r_x == 0`.
pub fn khat(n: usize, d: usize, eps: f64, r_x: f64) -> f64 {
    if eps == 0.0 || r_x == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let ratio = eps / r_x;
    let cap = nf.powf(d as f64 / (2.0 + d as f64));
    (nf * ratio * ratio).min(cap)
}

/// Greedy farthest-point clustering with the data-driven stopping rule.
///
/// The first center is a uniformly random row drawn from a ChaCha8 stream
/// seeded by `seed`. Farthest-point ties go to the smallest row index.
pub fn afpc(dataset: &Dataset, seed: u64) -> Partition {
    let n = dataset.n();
    let d = dataset.d();
    let (r_x, r_y) = data_radii(dataset).expect("dataset is non-empty by construction");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);

    let mut sources = vec![first];
    let mut labels = vec![0usize; n];
    let c0 = dataset.row(first);
    let mut min_d2: Vec<f64> = dataset.rows().map(|r| sq_dist(r, c0)).collect();

    loop {
        let (far_idx, far_d2) = farthest(&min_d2);
        let eps = far_d2.sqrt();
        if (sources.len() as f64) >= khat(n, d, eps, r_x) || far_d2 == 0.0 {
            break;
        }
        let k = sources.len();
        sources.push(far_idx);
        let c = dataset.row(far_idx);
        for (i, row) in dataset.rows().enumerate() {
            let d2 = sq_dist(row, c);
            // strict: earlier centers win ties
            if d2 < min_d2[i] {
                min_d2[i] = d2;
                labels[i] = k;
            }
        }
    }

    let eps_n = farthest(&min_d2).1.sqrt();
    Partition {
        centers: sources.iter().map(|&i| dataset.row(i).to_vec()).collect(),
        center_source_rows: sources,
        assignment: labels,
        eps_n,
        r_x,
        r_y,
    }
}

fn farthest(min_d2: &[f64]) -> (usize, f64) {
    let mut best = (0, min_d2[0]);
    for (i, &v) in min_d2.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Voronoi labels (smallest index among equidistant centers) and the cover radius.
pub fn assign_cells(centers: &[Vec<f64>], dataset: &Dataset) -> Result<(Vec<usize>, f64)> {
    if centers.is_empty() {
        return Err(DcfError::InvalidArgument("at least one center is required".into()));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != dataset.d()) {
        return Err(DcfError::DimensionMismatch { expected: dataset.d(), got: c.len() });
    }
    let mut labels = Vec::with_capacity(dataset.n());
    let mut worst: f64 = 0.0;
    for row in dataset.rows() {
        let (label, d2) = nearest_center(centers, row);
        labels.push(label);
        worst = worst.max(d2);
    }
    Ok((labels, worst.sqrt()))
}

#[inline]
pub(crate) fn nearest_center(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, sq_dist(x, &centers[0]));
    for (k, c) in centers.iter().enumerate().skip(1) {
        let d2 = sq_dist(x, c);
        if d2 < best.1 {
            best = (k, d2);
        }
    }
    best
}
