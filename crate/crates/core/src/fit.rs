//! The fitting pipeline: partition, regularization schedule, the convex
//! penalty-solved initial problem, smoothed refinement and finalization,
//! for every model variant.
//!
//! All optimization happens in internal coordinates (per-column
//! standardized covariates and standardized responses unless disabled);
//! returned models carry the maps back to raw coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{DcfError, Result};
use crate::features::{feature_dim_unchecked, phi_into, FeatureKind};
use crate::model::{
    dot, norm2, symmetric_bias_center, AffinePiece, Body, DcComponent, DcModel, MaxMinAffine, Piece, Standardization,
    Variant,
};
use crate::partition::{afpc, Dataset, Partition};
use crate::solver::{
    lbfgs_minimize, max_violation, penalty_objective, softmax_weights_into, ConstraintSet, Objective, SolveReport,
    SolverConfig,
};

/// Smoothing offset inside the norm-constraint residuals.
pub const NORM_KAPPA: f64 = 1e-12;
/// Guards the covariate radius in the default schedule.
pub const RADIUS_FLOOR: f64 = 1e-12;
/// Slack allowed when comparing the refined objective against the initial one.
pub const REFINE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theta2Mode {
    /// `(r_x / n)^2`
    Weak,
    /// `r_x^2 / n`
    Strong,
}

impl std::str::FromStr for Theta2Mode {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(Self::Weak),
            "strong" => Ok(Self::Strong),
            other => Err(DcfError::InvalidArgument(format!("unknown theta2 mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    /// Free slack on the slope-norm bound.
    pub theta0: f64,
    /// Weight of the squared slope-bound variable.
    pub theta1: f64,
    /// Ridge weight on all slopes.
    pub theta2: f64,
    /// Multiplier of the initial largest slope norm in the refinement cap.
    pub theta3: f64,
}

impl RegParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        let ok = self.theta0 >= 0.0
            && self.theta1 > 0.0
            && self.theta2 >= 0.0
            && self.theta2 <= self.theta1 / k as f64 * (1.0 + 1e-12)
            && self.theta3 >= 1.0
            && [self.theta0, self.theta1, self.theta2, self.theta3].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DcfError::InvalidArgument(format!("invalid regularization parameters {self:?}")))
        }
    }
}

/// Default schedule. `n` is real-valued so the formulas can be probed at
/// non-integer sample sizes; `theta3` is floored at 1.
pub fn default_reg_params(r_x: f64, r_y: f64, n: f64, d: usize, k: usize, mode: Theta2Mode) -> RegParams {
    let ln_n = n.ln();
    let theta0 = r_y / r_x.max(RADIUS_FLOOR) * ln_n;
    let theta1 = r_x.powi(2).max(1.0) * (d * k) as f64 / n;
    let theta2 = match mode {
        Theta2Mode::Weak => (r_x / n).powi(2),
        Theta2Mode::Strong => r_x.powi(2) / n,
    }
    .min(theta1 / k as f64);
    RegParams { theta0, theta1, theta2, theta3: ln_n.max(1.0) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub variant: Variant,
    pub kind: FeatureKind,
    pub theta2_mode: Theta2Mode,
    pub seed: u64,
    pub solver: SolverConfig,
    pub standardize_internally: bool,
    /// Skip the refinement step when false.
    pub refine: bool,
    /// Replaces the default schedule when set.
    pub reg_override: Option<RegParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Single,
            kind: FeatureKind::L2,
            theta2_mode: Theta2Mode::Weak,
            seed: 0,
            solver: SolverConfig::default(),
            standardize_internally: true,
            refine: true,
            reg_override: None,
        }
    }
}

impl FitConfig {
    pub fn new(variant: Variant, kind: FeatureKind) -> Self {
        Self { variant, kind, ..Self::default() }
    }
}

/// Refinement regularizer `theta_fn * max(|w| - cap)_+^2 + theta2 * sum |w|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegSchedule {
    pub lambda_fn: f64,
    pub cap: f64,
    pub theta_fn: f64,
    pub theta2: f64,
}

impl RegSchedule {
    /// Builds the schedule from the slope norms and risk of the initial estimate.
    pub fn from_initial(initial_norms: &[f64], risk_initial: f64, reg: &RegParams) -> Self {
        let lambda_fn = initial_norms.iter().copied().fold(0.0, f64::max);
        let ridge: f64 = reg.theta2 * initial_norms.iter().map(|v| v * v).sum::<f64>();
        let theta_fn = if lambda_fn > 0.0 { (risk_initial + ridge) / lambda_fn.powi(2) } else { 0.0 };
        Self { lambda_fn, cap: reg.theta3 * lambda_fn, theta_fn, theta2: reg.theta2 }
    }

    pub fn value(&self, norms: &[f64]) -> f64 {
        let worst = norms.iter().copied().fold(0.0, f64::max);
        let hinge = if self.theta_fn > 0.0 { self.theta_fn * (worst - self.cap).max(0.0).powi(2) } else { 0.0 };
        hinge + self.theta2 * norms.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Euclidean norms of every slope in the model (inner slopes for max-min-affine).
pub fn slope_norms(model: &DcModel) -> Vec<f64> {
    match model.body() {
        Body::Max(c) => c.pieces().iter().map(|p| norm2(&p.w)).collect(),
        Body::Difference { pos, neg } => pos.pieces().iter().chain(neg.pieces()).map(|p| norm2(&p.w)).collect(),
        Body::MaxMin(m) => m.blocks().iter().flatten().map(|p| norm2(&p.slope)).collect(),
    }
}

/// Training risk in the coordinates of `data`, ignoring any stored standardization.
pub fn risk_internal(model: &DcModel, data: &Dataset) -> f64 {
    let mut buf = vec![0.0; feature_dim_unchecked(model.kind(), model.d())];
    data.rows().zip(data.y()).map(|(x, y)| (model.eval_internal(x, &mut buf) - y).powi(2)).sum::<f64>()
        / data.n() as f64
}

/// `reg_n` of `model` under the schedule induced by `initial_model`.
pub fn reg_n_value(model: &DcModel, initial_model: &DcModel, reg: &RegParams, risk_initial: f64) -> f64 {
    RegSchedule::from_initial(&slope_norms(initial_model), risk_initial, reg).value(&slope_norms(model))
}

/// Slope restriction imposed by a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restriction {
    None,
    /// Norm coefficient dropped from the optimization.
    NoNorm,
    NormNonPositive,
    NormNonNegative,
    PlusConvex,
}

impl Restriction {
    fn of(variant: Variant) -> Self {
        match variant {
            Variant::MaxMinAffine => Self::NormNonPositive,
            Variant::ConvexMaxAffine => Self::NoNorm,
            Variant::ConvexNorm => Self::NormNonNegative,
            Variant::ConvexPlus => Self::PlusConvex,
            _ => Self::None,
        }
    }

    fn per_piece(self, d: usize) -> usize {
        match self {
            Self::NormNonPositive | Self::NormNonNegative => 1,
            Self::PlusConvex => d,
            _ => 0,
        }
    }

    /// Residual `j` of one optimized slope.
    fn residual(self, w: &[f64], d: usize, j: usize) -> f64 {
        match self {
            Self::NormNonPositive => w[d],
            Self::NormNonNegative => -w[d],
            Self::PlusConvex => -(w[j] + w[d + j]),
            _ => 0.0,
        }
    }

    fn add_gradient(self, d: usize, j: usize, coef: f64, gw: &mut [f64]) {
        match self {
            Self::NormNonPositive => gw[d] += coef,
            Self::NormNonNegative => gw[d] -= coef,
            Self::PlusConvex => {
                gw[j] -= coef;
                gw[d + j] -= coef;
            }
            _ => {}
        }
    }

    /// Moves a full-layout slope onto the restricted set.
    fn project(self, w: &mut [f64], d: usize) {
        match self {
            Self::NoNorm => w[d] = 0.0,
            Self::NormNonPositive => w[d] = w[d].min(0.0),
            Self::NormNonNegative => w[d] = w[d].max(0.0),
            Self::PlusConvex => {
                for j in 0..d {
                    let gap = (-(w[j] + w[d + j])).max(0.0);
                    w[j] += 0.5 * gap;
                    w[d + j] = (w[d + j] + 0.5 * gap).max(-w[j]);
                }
            }
            Self::None => {}
        }
    }
}

/// Index map of `[z?; (b_1..b_K, w_1..w_K) per component]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub components: usize,
    pub k: usize,
    /// Optimized slope length.
    pub q: usize,
    pub has_z: bool,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.has_z as usize + self.components * self.k * (1 + self.q)
    }

    fn base(&self, c: usize) -> usize {
        self.has_z as usize + c * self.k * (1 + self.q)
    }

    pub fn b(&self, c: usize, k: usize) -> usize {
        self.base(c) + k
    }

    pub fn w(&self, c: usize, k: usize) -> usize {
        self.base(c) + self.k + k * self.q
    }
}

fn sign(c: usize) -> f64 {
    if c == 0 {
        1.0
    } else {
        -1.0
    }
}

fn optimized_len(kind: FeatureKind, d: usize, restriction: Restriction) -> usize {
    let p = feature_dim_unchecked(kind, d);
    if restriction == Restriction::NoNorm {
        p - 1
    } else {
        p
    }
}

/// The initial convex problem: cell-wise least squares with a ridge on the
/// slopes and a squared slope-bound variable, subject to center-consistency
/// and slope-norm constraints.
pub struct InitialProblem<'a> {
    layout: Layout,
    restriction: Restriction,
    kind: FeatureKind,
    d: usize,
    p: usize,
    reg: RegParams,
    labels: &'a [usize],
    y: &'a [f64],
    row_feats: Vec<f64>,
    pair_feats: Vec<f64>,
    centers: &'a [Vec<f64>],
    cell_rows: Vec<Vec<usize>>,
}

pub fn build_initial_objective<'a>(
    data: &'a Dataset,
    partition: &'a Partition,
    variant: Variant,
    kind: FeatureKind,
    reg: &RegParams,
) -> Result<InitialProblem<'a>> {
    variant.check_kind(kind)?;
    if partition.assignment.len() != data.n() {
        return Err(DcfError::DimensionMismatch { expected: data.n(), got: partition.assignment.len() });
    }
    let d = data.d();
    let k = partition.k();
    let p = feature_dim_unchecked(kind, d);
    let restriction = Restriction::of(variant);
    let components = if variant == Variant::Symmetric { 2 } else { 1 };
    let layout = Layout { components, k, q: optimized_len(kind, d, restriction), has_z: true };
    let mut row_feats = vec![0.0; data.n() * p];
    for (i, (x, out)) in data.rows().zip(row_feats.chunks_exact_mut(p)).enumerate() {
        phi_into(kind, x, &partition.centers[partition.assignment[i]], out);
    }
    let mut pair_feats = vec![0.0; k * k * p];
    for a in 0..k {
        for l in 0..k {
            let off = (a * k + l) * p;
            phi_into(kind, &partition.centers[a], &partition.centers[l], &mut pair_feats[off..off + p]);
        }
    }
    let mut cell_rows = vec![Vec::new(); k];
    for (i, &lab) in partition.assignment.iter().enumerate() {
        cell_rows[lab].push(i);
    }
    Ok(InitialProblem {
        layout,
        restriction,
        kind,
        d,
        p,
        reg: *reg,
        labels: &partition.assignment,
        y: data.y(),
        row_feats,
        pair_feats,
        centers: &partition.centers,
        cell_rows,
    })
}

impl InitialProblem<'_> {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn pairs(&self) -> usize {
        self.layout.k * (self.layout.k - 1)
    }

    fn pair_feat(&self, a: usize, l: usize) -> &[f64] {
        let off = (a * self.layout.k + l) * self.p;
        &self.pair_feats[off..off + self.layout.q]
    }

    fn row_feat(&self, i: usize) -> &[f64] {
        &self.row_feats[i * self.p..i * self.p + self.layout.q]
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    /// Zero slopes, the first component constant at the mean response.
    pub fn certificate(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.dim()];
        let mean = self.y.iter().sum::<f64>() / self.n() as f64;
        for k in 0..self.layout.k {
            x[self.layout.b(0, k)] = mean;
        }
        x
    }

    /// Per-cell ridge regression, projected on the slope restriction, with
    /// biases raised by one pass of pairwise maxima.
    pub fn warm_start(&self) -> Vec<f64> {
        let l = self.layout;
        let q = l.q;
        let n = self.n() as f64;
        let ridge = (n * self.reg.theta2).max(1e-10);
        let mut x = vec![0.0; l.dim()];
        for (k, rows) in self.cell_rows.iter().enumerate() {
            let (b, mut w) = ridge_cell(rows.iter().map(|&i| (self.row_feat(i), self.y[i])), q, ridge);
            let mut full = w.clone();
            full.resize(self.p, 0.0);
            self.restriction.project(&mut full, self.d);
            w.copy_from_slice(&full[..q]);
            x[l.b(0, k)] = b;
            x[l.w(0, k)..l.w(0, k) + q].copy_from_slice(&w);
        }
        let raised: Vec<f64> = (0..l.k)
            .map(|a| {
                (0..l.k)
                    .map(|j| x[l.b(0, j)] + dot(&x[l.w(0, j)..l.w(0, j) + q], self.pair_feat(a, j)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (a, v) in raised.into_iter().enumerate() {
            x[l.b(0, a)] = v;
        }
        let worst = (0..l.k).map(|k| norm2(&x[l.w(0, k)..l.w(0, k) + q])).fold(0.0, f64::max);
        x[0] = (worst - self.reg.theta0).max(0.0);
        x
    }

    /// Full-layout components encoded by the parameter vector.
    pub fn components(&self, x: &[f64]) -> Result<Vec<DcComponent>> {
        (0..self.layout.components)
            .map(|c| components_from(x, &self.layout, c, self.kind, self.centers, self.p, self.restriction))
            .collect()
    }

    /// Projects the slopes of `x` onto the variant's restriction.
    pub fn project(&self, x: &mut [f64]) {
        if matches!(self.restriction, Restriction::None | Restriction::NoNorm) {
            return;
        }
        let l = self.layout;
        for c in 0..l.components {
            for k in 0..l.k {
                let s = l.w(c, k);
                self.restriction.project(&mut x[s..s + l.q], self.d);
            }
        }
    }
}

fn components_from(
    x: &[f64],
    l: &Layout,
    c: usize,
    kind: FeatureKind,
    centers: &[Vec<f64>],
    p: usize,
    restriction: Restriction,
) -> Result<DcComponent> {
    let pieces = (0..l.k)
        .map(|k| {
            let mut w = x[l.w(c, k)..l.w(c, k) + l.q].to_vec();
            w.resize(p, 0.0);
            if restriction == Restriction::NoNorm {
                w[p - 1] = 0.0;
            }
            Piece { b: x[l.b(c, k)], w }
        })
        .collect();
    DcComponent::new(kind, centers.to_vec(), pieces)
}

fn ridge_cell<'a>(rows: impl Iterator<Item = (&'a [f64], f64)>, q: usize, ridge: f64) -> (f64, Vec<f64>) {
    let m = q + 1;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut feat = vec![1.0; m];
    let mut count = 0usize;
    for (f, y) in rows {
        feat[1..].copy_from_slice(f);
        for r in 0..m {
            rhs[r] += feat[r] * y;
            for c in 0..m {
                a[(r, c)] += feat[r] * feat[c];
            }
        }
        count += 1;
    }
    if count == 0 {
        return (0.0, vec![0.0; q]);
    }
    for j in 1..m {
        a[(j, j)] += ridge;
    }
    let sol = a
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| a.svd(true, true).solve(&rhs, 1e-12).ok())
        .unwrap_or_else(|| DVector::zeros(m));
    if sol.iter().any(|v| !v.is_finite()) {
        return (0.0, vec![0.0; q]);
    }
    (sol[0], sol.iter().skip(1).copied().collect())
}

impl Objective for InitialProblem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let q = l.q;
        let n = self.n() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let z = x[0];
        let mut value = self.reg.theta1 * z * z;
        grad[0] = 2.0 * self.reg.theta1 * z;
        for c in 0..l.components {
            for k in 0..l.k {
                let s = l.w(c, k);
                for j in s..s + q {
                    value += self.reg.theta2 * x[j] * x[j];
                    grad[j] += 2.0 * self.reg.theta2 * x[j];
                }
            }
        }
        let mut risk = 0.0;
        for (i, &k) in self.labels.iter().enumerate() {
            let f = self.row_feat(i);
            let mut h = -self.y[i];
            for c in 0..l.components {
                let s = l.w(c, k);
                h += sign(c) * (x[l.b(c, k)] + dot(&x[s..s + q], f));
            }
            risk += h * h;
            let coef = 2.0 * h / n;
            for c in 0..l.components {
                let cs = sign(c) * coef;
                grad[l.b(c, k)] += cs;
                let s = l.w(c, k);
                for (g, fj) in grad[s..s + q].iter_mut().zip(f) {
                    *g += cs * fj;
                }
            }
        }
        value + risk / n
    }
}

impl ConstraintSet for InitialProblem<'_> {
    fn len(&self) -> usize {
        let l = self.layout;
        l.components * (self.pairs() + l.k + l.k * self.restriction.per_piece(self.d))
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let l = self.layout;
        let q = l.q;
        let mut idx = 0;
        for c in 0..l.components {
            for a in 0..l.k {
                for j in (0..l.k).filter(|&j| j != a) {
                    let s = l.w(c, j);
                    out[idx] = x[l.b(c, j)] + dot(&x[s..s + q], self.pair_feat(a, j)) - x[l.b(c, a)];
                    idx += 1;
                }
            }
        }
        for c in 0..l.components {
            for k in 0..l.k {
                let s = l.w(c, k);
                let sq = dot(&x[s..s + q], &x[s..s + q]);
                out[idx] = (sq + NORM_KAPPA * NORM_KAPPA).sqrt() - NORM_KAPPA - x[0] - self.reg.theta0;
                idx += 1;
            }
        }
        let r = self.restriction.per_piece(self.d);
        for c in 0..l.components {
            for k in 0..l.k {
                let s = l.w(c, k);
                for j in 0..r {
                    out[idx] = self.restriction.residual(&x[s..s + q], self.d, j);
                    idx += 1;
                }
            }
        }
    }

    fn add_gradient(&self, x: &[f64], i: usize, coef: f64, grad: &mut [f64]) {
        let l = self.layout;
        let q = l.q;
        let pairs = self.pairs();
        let norms = l.k;
        let r = self.restriction.per_piece(self.d);
        let block_pairs = l.components * pairs;
        let block_norms = l.components * norms;
        if i < block_pairs {
            let c = i / pairs;
            let rem = i % pairs;
            let a = rem / (l.k - 1);
            let jj = rem % (l.k - 1);
            let j = if jj >= a { jj + 1 } else { jj };
            grad[l.b(c, j)] += coef;
            grad[l.b(c, a)] -= coef;
            let s = l.w(c, j);
            for (g, f) in grad[s..s + q].iter_mut().zip(self.pair_feat(a, j)) {
                *g += coef * f;
            }
        } else if i < block_pairs + block_norms {
            let rem = i - block_pairs;
            let (c, k) = (rem / norms, rem % norms);
            let s = l.w(c, k);
            let root = (dot(&x[s..s + q], &x[s..s + q]) + NORM_KAPPA * NORM_KAPPA).sqrt();
            for j in 0..q {
                grad[s + j] += coef * x[s + j] / root;
            }
            grad[0] -= coef;
        } else {
            let rem = i - block_pairs - block_norms;
            let (ck, j) = (rem / r, rem % r);
            let (c, k) = (ck / l.k, ck % l.k);
            let s = l.w(c, k);
            self.restriction.add_gradient(self.d, j, coef, &mut grad[s..s + q]);
        }
    }
}

/// Outcome of the penalty solve, in the coordinates of the input data.
#[derive(Debug, Clone)]
pub struct InitialFit {
    /// One component, or two for the symmetric variant (positive first).
    pub components: Vec<DcComponent>,
    pub z: f64,
    pub report: SolveReport,
    pub penalized_objective: f64,
    /// Penalized objective at the constant mean-response certificate.
    pub certificate_objective: f64,
    /// Largest residual of all initial-problem constraints after projection.
    pub constraint_violation_max: f64,
}

/// Solves the penalized initial problem on `data`, which must already be in
/// the coordinates the partition was computed in.
pub fn fit_initial(
    data: &Dataset,
    partition: &Partition,
    variant: Variant,
    kind: FeatureKind,
    reg: &RegParams,
    solver: &SolverConfig,
) -> Result<InitialFit> {
    solver.validate()?;
    reg.validate(partition.k())?;
    let problem = build_initial_objective(data, partition, variant, kind, reg)?;
    let penalized = penalty_objective(&problem, &problem, solver.rho_pen);
    let mut scratch = vec![0.0; problem.dim()];
    let cert = problem.certificate();
    let cert_value = penalized.eval(&cert, &mut scratch);
    let warm = problem.warm_start();
    let warm_value = penalized.eval(&warm, &mut scratch);
    let start = if warm_value < cert_value { warm } else { cert };
    let (mut x, report) = lbfgs_minimize(&penalized, &start, solver);
    if let Some(msg) = &report.abort {
        if !report.final_value.is_finite() {
            return Err(DcfError::SolverAbort(msg.clone()));
        }
    }
    let penalized_objective = report.final_value;
    problem.project(&mut x);
    let constraint_violation_max = max_violation(&problem, &x);
    Ok(InitialFit {
        components: problem.components(&x)?,
        z: x[0],
        report,
        penalized_objective,
        certificate_objective: cert_value,
        constraint_violation_max,
    })
}

/// Whether the objective value reported alongside the smoothed gradient uses
/// the true maxima or their soft-max surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    /// True maxima; only gradients are smoothed.
    TrueMax,
    /// Soft-max values, consistent with the gradients.
    Smoothed,
}

enum Features {
    Cached(Vec<f64>),
    OnTheFly,
}

const FEATURE_CACHE_LIMIT: usize = 1 << 24;

struct PieceFeatures {
    kind: FeatureKind,
    p: usize,
    k: usize,
    centers: Vec<Vec<f64>>,
    store: Features,
}

impl PieceFeatures {
    fn new(kind: FeatureKind, centers: Vec<Vec<f64>>, data: &Dataset) -> Self {
        let p = feature_dim_unchecked(kind, data.d());
        let k = centers.len();
        let store = if data.n() * k * p <= FEATURE_CACHE_LIMIT {
            let mut v = vec![0.0; data.n() * k * p];
            for (i, x) in data.rows().enumerate() {
                for (c, center) in centers.iter().enumerate() {
                    let off = (i * k + c) * p;
                    phi_into(kind, x, center, &mut v[off..off + p]);
                }
            }
            Features::Cached(v)
        } else {
            Features::OnTheFly
        };
        Self { kind, p, k, centers, store }
    }

    fn get<'s>(&'s self, i: usize, c: usize, x: &[f64], buf: &'s mut [f64]) -> &'s [f64] {
        match &self.store {
            Features::Cached(v) => {
                let off = (i * self.k + c) * self.p;
                &v[off..off + self.p]
            }
            Features::OnTheFly => {
                phi_into(self.kind, x, &self.centers[c], buf);
                buf
            }
        }
    }
}

/// Smoothed refinement objective over max-form parameters (one or two components).
pub struct MaxFormRefinement<'a> {
    layout: Layout,
    kind: FeatureKind,
    restriction: Restriction,
    d: usize,
    p: usize,
    data: &'a Dataset,
    feats: PieceFeatures,
    schedule: RegSchedule,
    mu: f64,
    rho: f64,
    mode: ValueMode,
}

/// Smoothed refinement objective over max-min-affine parameters.
pub struct MaxMinRefinement<'a> {
    blocks: usize,
    d: usize,
    data: &'a Dataset,
    schedule: RegSchedule,
    mu: f64,
    mode: ValueMode,
}

pub enum RefinementObjective<'a> {
    MaxForm(MaxFormRefinement<'a>),
    MaxMin(MaxMinRefinement<'a>),
}

/// Builds the refinement objective around `initial` (internal coordinates, offset ignored).
pub fn build_refine_objective<'a>(
    initial: &DcModel,
    data: &'a Dataset,
    schedule: RegSchedule,
    solver: &SolverConfig,
    mode: ValueMode,
) -> Result<(RefinementObjective<'a>, Vec<f64>)> {
    if initial.d() != data.d() {
        return Err(DcfError::DimensionMismatch { expected: initial.d(), got: data.d() });
    }
    let restriction = Restriction::of(initial.variant());
    match initial.body() {
        Body::MaxMin(m) => {
            let obj = MaxMinRefinement { blocks: m.k(), d: m.d(), data, schedule, mu: solver.mu, mode };
            let mut x = Vec::with_capacity(obj.dim());
            for p in m.blocks().iter().flatten() {
                x.push(p.bias);
                x.extend_from_slice(&p.slope);
            }
            Ok((RefinementObjective::MaxMin(obj), x))
        }
        body => {
            let comps: Vec<&DcComponent> = match body {
                Body::Max(c) => vec![c],
                Body::Difference { pos, neg } => vec![pos, neg],
                Body::MaxMin(_) => unreachable!(),
            };
            let k = comps[0].k();
            if comps.iter().any(|c| c.k() != k || c.centers() != comps[0].centers()) {
                return Err(DcfError::InvalidArgument("refinement needs components over a shared center set".into()));
            }
            let kind = comps[0].kind();
            let d = data.d();
            let p = feature_dim_unchecked(kind, d);
            let q = optimized_len(kind, d, restriction);
            let layout = Layout { components: comps.len(), k, q, has_z: false };
            let mut x = vec![0.0; layout.dim()];
            for (c, comp) in comps.iter().enumerate() {
                for (kk, piece) in comp.pieces().iter().enumerate() {
                    x[layout.b(c, kk)] = piece.b;
                    x[layout.w(c, kk)..layout.w(c, kk) + q].copy_from_slice(&piece.w[..q]);
                }
            }
            let feats = PieceFeatures::new(kind, comps[0].centers().to_vec(), data);
            let obj = MaxFormRefinement {
                layout,
                kind,
                restriction,
                d,
                p,
                data,
                feats,
                schedule,
                mu: solver.mu,
                rho: solver.rho_pen,
                mode,
            };
            Ok((RefinementObjective::MaxForm(obj), x))
        }
    }
}

impl Objective for RefinementObjective<'_> {
    fn dim(&self) -> usize {
        match self {
            Self::MaxForm(o) => o.dim(),
            Self::MaxMin(o) => o.dim(),
        }
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Self::MaxForm(o) => o.eval(x, grad),
            Self::MaxMin(o) => o.eval(x, grad),
        }
    }
}

/// Adds the hinge and ridge terms of `schedule` over slopes stored at
/// `slices` (start offsets of length `len` each).
fn add_reg_terms(
    schedule: &RegSchedule,
    mu: f64,
    mode: ValueMode,
    x: &[f64],
    starts: &[usize],
    len: usize,
    grad: &mut [f64],
) -> f64 {
    let mut value = 0.0;
    let norms: Vec<f64> = starts.iter().map(|&s| norm2(&x[s..s + len])).collect();
    for &s in starts {
        for j in s..s + len {
            value += schedule.theta2 * x[j] * x[j];
            grad[j] += 2.0 * schedule.theta2 * x[j];
        }
    }
    if schedule.theta_fn > 0.0 {
        let alpha: Vec<f64> = norms.iter().map(|v| (v - schedule.cap).max(0.0).powi(2)).collect();
        let mut wts = vec![0.0; alpha.len()];
        let (hard, soft) = softmax_weights_into(&alpha, mu, &mut wts);
        value += schedule.theta_fn * if mode == ValueMode::Smoothed { soft } else { hard };
        for ((&s, &nv), &wt) in starts.iter().zip(&norms).zip(&wts) {
            let excess = nv - schedule.cap;
            if excess > 0.0 && wt > 0.0 {
                let coef = schedule.theta_fn * wt * 2.0 * excess / nv;
                for j in s..s + len {
                    grad[j] += coef * x[j];
                }
            }
        }
    }
    value
}

impl MaxFormRefinement<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let q = l.q;
        let n = self.data.n() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut vals = vec![0.0; l.components * l.k];
        let mut wts = vec![0.0; l.components * l.k];
        let mut buf = vec![0.0; self.p];
        let mut risk = 0.0;
        for (i, (xi, yi)) in self.data.rows().zip(self.data.y()).enumerate() {
            let mut f = -yi;
            for c in 0..l.components {
                for k in 0..l.k {
                    let feat = self.feats.get(i, k, xi, &mut buf);
                    let s = l.w(c, k);
                    vals[c * l.k + k] = x[l.b(c, k)] + dot(&x[s..s + q], &feat[..q]);
                }
                let range = c * l.k..(c + 1) * l.k;
                let (hard, soft) = softmax_weights_into(&vals[range.clone()], self.mu, &mut wts[range]);
                f += sign(c) * if self.mode == ValueMode::Smoothed { soft } else { hard };
            }
            risk += f * f;
            let coef = 2.0 * f / n;
            for c in 0..l.components {
                for k in 0..l.k {
                    let wt = wts[c * l.k + k];
                    if wt == 0.0 {
                        continue;
                    }
                    let cw = sign(c) * coef * wt;
                    grad[l.b(c, k)] += cw;
                    let feat = self.feats.get(i, k, xi, &mut buf);
                    let s = l.w(c, k);
                    for (g, fj) in grad[s..s + q].iter_mut().zip(feat) {
                        *g += cw * fj;
                    }
                }
            }
        }
        let starts: Vec<usize> = (0..l.components).flat_map(|c| (0..l.k).map(move |k| l.w(c, k))).collect();
        let mut value = risk / n + add_reg_terms(&self.schedule, self.mu, self.mode, x, &starts, q, grad);
        let r = self.restriction.per_piece(self.d);
        if r > 0 {
            let mut pen = 0.0;
            for &s in &starts {
                for j in 0..r {
                    let g = self.restriction.residual(&x[s..s + q], self.d, j);
                    if g > 0.0 {
                        pen += g * g;
                        self.restriction.add_gradient(self.d, j, 2.0 * self.rho * g, &mut grad[s..s + q]);
                    }
                }
            }
            value += self.rho * pen;
        }
        value
    }

    fn components(&self, x: &[f64]) -> Result<Vec<DcComponent>> {
        (0..self.layout.components)
            .map(|c| {
                let mut comp =
                    components_from(x, &self.layout, c, self.kind, &self.feats.centers, self.p, self.restriction)?;
                if !matches!(self.restriction, Restriction::None | Restriction::NoNorm) {
                    let pieces = comp
                        .pieces()
                        .iter()
                        .map(|pc| {
                            let mut w = pc.w.clone();
                            self.restriction.project(&mut w, self.d);
                            Piece { b: pc.b, w }
                        })
                        .collect();
                    comp = DcComponent::new(self.kind, comp.centers().to_vec(), pieces)?;
                }
                Ok(comp)
            })
            .collect()
    }
}

impl MaxMinRefinement<'_> {
    fn inner(&self) -> usize {
        2 * self.d
    }

    fn dim(&self) -> usize {
        self.blocks * self.inner() * (1 + self.d)
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.d;
        let m = self.inner();
        let stride = 1 + d;
        let n = self.data.n() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut inner_vals = vec![0.0; self.blocks * m];
        let mut inner_wts = vec![0.0; self.blocks * m];
        let mut outer_soft = vec![0.0; self.blocks];
        let mut outer_hard = vec![0.0; self.blocks];
        let mut outer_wts = vec![0.0; self.blocks];
        let mut neg = vec![0.0; m];
        let mut risk = 0.0;
        for (xi, yi) in self.data.rows().zip(self.data.y()) {
            for k in 0..self.blocks {
                for l in 0..m {
                    let s = (k * m + l) * stride;
                    let v = x[s] + dot(&x[s + 1..s + stride], xi);
                    inner_vals[k * m + l] = v;
                    neg[l] = -v;
                }
                let (hard, soft) = softmax_weights_into(&neg, self.mu, &mut inner_wts[k * m..(k + 1) * m]);
                outer_hard[k] = -hard;
                outer_soft[k] = -soft;
            }
            let (_, soft) = softmax_weights_into(&outer_soft, self.mu, &mut outer_wts);
            let value = match self.mode {
                ValueMode::Smoothed => soft,
                ValueMode::TrueMax => outer_hard.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            let r = value - yi;
            risk += r * r;
            let coef = 2.0 * r / n;
            for k in 0..self.blocks {
                if outer_wts[k] == 0.0 {
                    continue;
                }
                for l in 0..m {
                    let wt = coef * outer_wts[k] * inner_wts[k * m + l];
                    if wt == 0.0 {
                        continue;
                    }
                    let s = (k * m + l) * stride;
                    grad[s] += wt;
                    for (g, xj) in grad[s + 1..s + stride].iter_mut().zip(xi) {
                        *g += wt * xj;
                    }
                }
            }
        }
        let starts: Vec<usize> = (0..self.blocks * m).map(|j| j * stride + 1).collect();
        risk / n + add_reg_terms(&self.schedule, self.mu, self.mode, x, &starts, d, grad)
    }

    fn model(&self, x: &[f64]) -> Result<MaxMinAffine> {
        let stride = 1 + self.d;
        let m = self.inner();
        let blocks = (0..self.blocks)
            .map(|k| {
                (0..m)
                    .map(|l| {
                        let s = (k * m + l) * stride;
                        AffinePiece { bias: x[s], slope: x[s + 1..s + stride].to_vec() }
                    })
                    .collect()
            })
            .collect();
        MaxMinAffine::new(blocks)
    }
}

impl RefinementObjective<'_> {
    /// Decodes a parameter vector into a model body (restrictions projected).
    pub fn body(&self, x: &[f64]) -> Result<Body> {
        match self {
            Self::MaxMin(o) => Ok(Body::MaxMin(o.model(x)?)),
            Self::MaxForm(o) => {
                let mut comps = o.components(x)?;
                if comps.len() == 2 {
                    let neg = comps.pop().expect("two components");
                    let pos = comps.pop().expect("two components");
                    Ok(Body::Difference { pos, neg })
                } else {
                    Ok(Body::Max(comps.pop().expect("one component")))
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub model: DcModel,
    pub report: Option<SolveReport>,
    /// False when the solver result was rejected or refinement was skipped.
    pub accepted: bool,
    pub schedule: RegSchedule,
    pub objective_initial: f64,
    pub objective_refined: f64,
}

/// Locally minimizes risk plus the refinement regularizer from `initial`
/// (internal coordinates, offset 0). Falls back to `initial` when the result
/// does not improve on it.
pub fn refine(initial: &DcModel, data: &Dataset, reg: &RegParams, solver: &SolverConfig) -> Result<Refinement> {
    solver.validate()?;
    let risk0 = risk_internal(initial, data);
    let schedule = RegSchedule::from_initial(&slope_norms(initial), risk0, reg);
    let obj0 = risk0 + schedule.value(&slope_norms(initial));
    let unchanged = |report| Refinement {
        model: initial.clone(),
        report,
        accepted: false,
        schedule,
        objective_initial: obj0,
        objective_refined: obj0,
    };
    if schedule.lambda_fn == 0.0 {
        return Ok(unchanged(None));
    }
    let (objective, x0) = build_refine_objective(initial, data, schedule, solver, ValueMode::TrueMax)?;
    let (x, report) = lbfgs_minimize(&objective, &x0, solver);
    let body = match objective.body(&x) {
        Ok(b) => b,
        Err(_) => return Ok(unchanged(Some(report))),
    };
    let candidate = match DcModel::new(initial.variant(), body, initial.offset(), None) {
        Ok(m) => m,
        Err(_) => return Ok(unchanged(Some(report))),
    };
    let obj1 = risk_internal(&candidate, data) + schedule.value(&slope_norms(&candidate));
    if obj1.is_finite() && obj1 <= obj0 + REFINE_SLACK {
        Ok(Refinement {
            model: candidate,
            report: Some(report),
            accepted: true,
            schedule,
            objective_initial: obj0,
            objective_refined: obj1,
        })
    } else {
        Ok(unchanged(Some(report)))
    }
}

/// Prunes inactive pieces (per component, or per block) on the rows of
/// `data`, then centers the offset. Symmetric biases are re-centered too.
pub fn finalize(refined: &DcModel, data: &Dataset) -> Result<DcModel> {
    let body = match refined.body() {
        Body::Max(c) => Body::Max(c.prune(data)),
        Body::Difference { pos, neg } => Body::Difference { pos: pos.prune(data), neg: neg.prune(data) },
        Body::MaxMin(m) => Body::MaxMin(m.prune_rows(data.rows())),
    };
    let pruned = DcModel::new(refined.variant(), body, 0.0, None)?;
    let mut buf = vec![0.0; feature_dim_unchecked(pruned.kind(), pruned.d())];
    let mean_pred = data.rows().map(|x| pruned.eval_internal(x, &mut buf)).sum::<f64>() / data.n() as f64;
    let centered = pruned.with_offset(data.y_mean() - mean_pred);
    if refined.variant() == Variant::Symmetric {
        symmetric_bias_center(&centered)
    } else {
        Ok(centered)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Initial estimate (offset 0), raw coordinates.
    pub initial_model: DcModel,
    /// Max-norm single-component form of the initial estimate before the
    /// max-min-affine conversion (that variant only).
    pub initial_max_form: Option<DcModel>,
    pub refined_model: DcModel,
    pub final_model: DcModel,
    /// Partition of the internal-coordinate covariates.
    pub partition: Partition,
    pub reg: RegParams,
    pub schedule: RegSchedule,
    pub initial_report: SolveReport,
    pub refine_report: Option<SolveReport>,
    pub refinement_accepted: bool,
    pub initial_penalized_objective: f64,
    pub certificate_objective: f64,
    pub constraint_violation_max: f64,
    pub theta_fn: f64,
    /// Risks and risk-plus-regularizer values in internal coordinates.
    pub risk_initial: f64,
    pub risk_refined: f64,
    pub risk_final: f64,
    pub objective_initial: f64,
    pub objective_refined: f64,
    pub objective_final: f64,
    pub params_before_prune: usize,
    pub params_after_prune: usize,
    /// The standardized training data the optimization ran on.
    pub internal_data: Dataset,
}

/// Fits the variant named in `cfg`.
pub fn fit_dcf(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    match cfg.variant {
        Variant::Complement => fit_complement(data, cfg),
        _ => fit_core(data, cfg),
    }
}

/// Fits on negated responses and negates the estimate.
pub fn fit_complement(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    require_variant(cfg, &[Variant::Complement])?;
    let negated = data.with_responses(data.y().iter().map(|v| -v).collect())?;
    let inner_cfg = FitConfig { variant: Variant::Single, ..cfg.clone() };
    let mut res = fit_core(&negated, &inner_cfg)?;
    res.initial_model = flip(&res.initial_model)?;
    res.refined_model = flip(&res.refined_model)?;
    res.final_model = flip(&res.final_model)?;
    Ok(res)
}

pub fn fit_symmetric(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    require_variant(cfg, &[Variant::Symmetric])?;
    fit_core(data, cfg)
}

pub fn fit_max_min_affine(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    require_variant(cfg, &[Variant::MaxMinAffine])?;
    fit_core(data, cfg)
}

pub fn fit_convex(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    require_variant(cfg, &[Variant::ConvexMaxAffine, Variant::ConvexNorm, Variant::ConvexPlus])?;
    fit_core(data, cfg)
}

fn require_variant(cfg: &FitConfig, allowed: &[Variant]) -> Result<()> {
    if allowed.contains(&cfg.variant) {
        Ok(())
    } else {
        Err(DcfError::WrongVariant { expected: allowed[0].name(), got: cfg.variant.name() })
    }
}

fn flip(model: &DcModel) -> Result<DcModel> {
    let Body::Max(c) = model.body() else {
        return Err(DcfError::WrongVariant { expected: "single", got: model.variant().name() });
    };
    let std = model.standardization().map(|s| Standardization { y_shift: -s.y_shift, ..s.clone() });
    DcModel::new(Variant::Complement, Body::Max(c.clone()), -model.offset(), std)
}

fn body_from(comps: Vec<DcComponent>) -> Body {
    let mut comps = comps;
    if comps.len() == 2 {
        let neg = comps.pop().expect("two components");
        let pos = comps.pop().expect("two components");
        Body::Difference { pos, neg }
    } else {
        Body::Max(comps.pop().expect("one component"))
    }
}

fn fit_core(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    if data.n() < 2 {
        return Err(DcfError::InvalidArgument("fitting needs at least two samples".into()));
    }
    cfg.solver.validate()?;
    cfg.variant.check_kind(cfg.kind)?;
    let std = if cfg.standardize_internally { Standardization::fit(data) } else { Standardization::identity(data.d()) };
    let internal = std.map_dataset(data);
    let stored = cfg.standardize_internally.then(|| std.clone());
    let partition = afpc(&internal, cfg.seed);
    let k = partition.k();
    let reg = match cfg.reg_override {
        Some(r) => r,
        None => default_reg_params(partition.r_x, partition.r_y, internal.n() as f64, internal.d(), k, cfg.theta2_mode),
    };
    let init = fit_initial(&internal, &partition, cfg.variant, cfg.kind, &reg, &cfg.solver)?;

    let (initial, initial_max_form) = if cfg.variant == Variant::MaxMinAffine {
        let comp = init.components[0].clone();
        let mma = comp.to_max_min_affine()?;
        let max_form = DcModel::new(Variant::Single, Body::Max(comp), 0.0, stored.clone())?;
        (DcModel::new(Variant::MaxMinAffine, Body::MaxMin(mma), 0.0, None)?, Some(max_form))
    } else {
        let variant = if cfg.variant == Variant::Complement { Variant::Single } else { cfg.variant };
        (DcModel::new(variant, body_from(init.components.clone()), 0.0, None)?, None)
    };

    let refinement = if cfg.refine {
        refine(&initial, &internal, &reg, &cfg.solver)?
    } else {
        let risk0 = risk_internal(&initial, &internal);
        let schedule = RegSchedule::from_initial(&slope_norms(&initial), risk0, &reg);
        let obj = risk0 + schedule.value(&slope_norms(&initial));
        Refinement {
            model: initial.clone(),
            report: None,
            accepted: false,
            schedule,
            objective_initial: obj,
            objective_refined: obj,
        }
    };
    let final_internal = finalize(&refinement.model, &internal)?;

    let schedule = refinement.schedule;
    let risk_initial = risk_internal(&initial, &internal);
    let risk_refined = risk_internal(&refinement.model, &internal);
    let risk_final = risk_internal(&final_internal, &internal);
    let objective_final = risk_final + schedule.value(&slope_norms(&final_internal));
    Ok(FitResult {
        params_before_prune: refinement.model.num_params(),
        params_after_prune: final_internal.num_params(),
        initial_model: initial.with_standardization(stored.clone()),
        initial_max_form,
        refined_model: refinement.model.with_standardization(stored.clone()),
        final_model: final_internal.with_standardization(stored),
        partition,
        reg,
        schedule,
        initial_report: init.report,
        refine_report: refinement.report,
        refinement_accepted: refinement.accepted,
        initial_penalized_objective: init.penalized_objective,
        certificate_objective: init.certificate_objective,
        constraint_violation_max: init.constraint_violation_max,
        theta_fn: schedule.theta_fn,
        risk_initial,
        risk_refined,
        risk_final,
        objective_initial: refinement.objective_initial,
        objective_refined: refinement.objective_refined,
        objective_final,
        internal_data: internal,
    })
}
