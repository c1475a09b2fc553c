//! Constructive approximations of known target functions.
//!
//! These build max-affine, max-concave and quadratic-feature functions
//! directly from the values (and optionally gradients) of a target at the
//! points of a cover. They serve as oracles in tests and as reference curves
//! in the demo output.

use std::fmt;
use std::sync::Arc;

use crate::error::{DcfError, Result};
use crate::features::{constants, feature_dim_unchecked, FeatureKind};
use crate::model::{dot, DcComponent, DcModel, Piece};

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Multiplier applied to sampled Lipschitz and curvature estimates.
pub const SAFETY_FACTOR: f64 = 1.01;

/// A target `f` with its Lipschitz constant and, optionally, a gradient
/// selector and a gradient Lipschitz (curvature) constant.
#[derive(Clone)]
pub struct TargetFunction {
    eval: PointFn,
    grad: Option<GradFn>,
    lipschitz: f64,
    smoothness: Option<f64>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("lipschitz", &self.lipschitz)
            .field("smoothness", &self.smoothness)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl TargetFunction {
    pub fn new(eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(DcfError::InvalidArgument("lipschitz constant must be positive".into()));
        }
        Ok(Self { eval: Arc::new(eval), grad: None, lipschitz, smoothness: None })
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_smoothness(mut self, nu: f64) -> Result<Self> {
        if self.grad.is_none() {
            return Err(DcfError::InvalidArgument("a smoothness constant requires a gradient".into()));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(DcfError::InvalidArgument("smoothness constant must be positive".into()));
        }
        self.smoothness = Some(nu);
        Ok(self)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x))
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    /// The target `-f` with the same constants.
    pub fn negated(&self) -> Self {
        let f = self.eval.clone();
        let grad =
            self.grad.clone().map(|g| -> GradFn { Arc::new(move |x: &[f64]| g(x).into_iter().map(|v| -v).collect()) });
        Self { eval: Arc::new(move |x: &[f64]| -f(x)), grad, lipschitz: self.lipschitz, smoothness: self.smoothness }
    }

    /// `x sin x` on `[0, 6]`, with constants from dense sampling of `f'` and `f''`.
    pub fn x_sin_x() -> Self {
        let grid = linspace(0.0, 6.0, 100_001);
        let lam = grid.iter().map(|&x| (x.sin() + x * x.cos()).abs()).fold(0.0, f64::max);
        let nu = grid.iter().map(|&x| (2.0 * x.cos() - x * x.sin()).abs()).fold(0.0, f64::max);
        Self::new(|x| x[0] * x[0].sin(), SAFETY_FACTOR * lam)
            .expect("positive constant")
            .with_gradient(|x| vec![x[0].sin() + x[0] * x[0].cos()])
            .with_smoothness(SAFETY_FACTOR * nu)
            .expect("gradient present")
    }

    /// `max{1 - |x-1|, 2 - |x-3|, 1 - |x-5|/2}`, which is 1-Lipschitz.
    /// The gradient is the slope of the first active piece, right derivative at kinks.
    pub fn three_peaks() -> Self {
        Self::new(|x| three_peaks_pieces(x[0]).0, 1.0)
            .expect("positive constant")
            .with_gradient(|x| vec![three_peaks_pieces(x[0]).1])
    }
}

fn three_peaks_pieces(x: f64) -> (f64, f64) {
    let pieces = [
        (1.0 - (x - 1.0).abs(), if x >= 1.0 { -1.0 } else { 1.0 }),
        (2.0 - (x - 3.0).abs(), if x >= 3.0 { -1.0 } else { 1.0 }),
        (1.0 - (x - 5.0).abs() / 2.0, if x >= 5.0 { -0.5 } else { 0.5 }),
    ];
    pieces.into_iter().fold((f64::NEG_INFINITY, 0.0), |best, p| if p.0 > best.0 { p } else { best })
}

/// Centers of an (internal) cover together with its radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverSpec {
    centers: Vec<Vec<f64>>,
    eps: f64,
}

impl CoverSpec {
    pub fn new(centers: Vec<Vec<f64>>, eps: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(DcfError::InvalidArgument("cover needs at least one center".into()));
        }
        let d = centers[0].len();
        if d == 0 {
            return Err(DcfError::InvalidDimension("centers must have dimension >= 1".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(DcfError::DimensionMismatch { expected: d, got: c.len() });
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(DcfError::InvalidArgument("cover radius must be non-negative".into()));
        }
        Ok(Self { centers, eps })
    }

    /// `count` equidistant centers spanning `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(hi >= lo) {
            return Err(DcfError::InvalidArgument("interval cover needs count >= 1 and lo <= hi".into()));
        }
        let eps = if count == 1 { (hi - lo) / 2.0 } else { (hi - lo) / (2.0 * (count - 1) as f64) };
        let centers = if count == 1 {
            vec![vec![(lo + hi) / 2.0]]
        } else {
            linspace(lo, hi, count).into_iter().map(|v| vec![v]).collect()
        };
        Self::new(centers, eps)
    }

    /// Tensor grid with `per_axis` equidistant values on each axis of the box `[lo, hi]^d`.
    pub fn grid(lo: f64, hi: f64, per_axis: usize, d: usize) -> Result<Self> {
        let axis = Self::interval(lo, hi, per_axis)?;
        let values: Vec<f64> = axis.centers.iter().map(|c| c[0]).collect();
        let mut centers = vec![Vec::with_capacity(d)];
        for _ in 0..d {
            centers = centers
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut n = c.clone();
                        n.push(v);
                        n
                    })
                })
                .collect();
        }
        Self::new(centers, axis.eps * (d as f64).sqrt())
    }

    /// Cover whose radius is the largest distance from `points` to the nearest center.
    pub fn covering(centers: Vec<Vec<f64>>, points: &[Vec<f64>]) -> Result<Self> {
        let eps = covering_radius(&centers, points);
        Self::new(centers, eps)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn d(&self) -> usize {
        self.centers[0].len()
    }
}

/// `max_i min_k ||p_i - c_k||`.
pub fn covering_radius(centers: &[Vec<f64>], points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min).sqrt())
        .fold(0.0, f64::max)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Width of the two-sided band `0 <= f - lower <= band` for the McShane construction.
pub fn mcshane_band(kind: FeatureKind, d: usize, lipschitz: f64, eps: f64) -> Result<f64> {
    let c = constants(kind, d)?;
    Ok((1.0 + c.t1 / c.t0) * lipschitz * eps)
}

/// Max-concave lower approximation `max_k f(c_k) - t1 lambda ||x - c_k||_kind`.
pub fn mcshane_lower(target: &TargetFunction, cover: &CoverSpec, kind: FeatureKind) -> Result<DcComponent> {
    let d = cover.d();
    let c = constants(kind, d)?;
    let p = feature_dim_unchecked(kind, d);
    let lam = target.lipschitz();
    let w = match kind {
        FeatureKind::Plus => vec![-lam; p],
        _ => {
            let mut w = vec![0.0; p];
            w[d] = -c.t1 * lam;
            w
        }
    };
    let pieces = cover.centers().iter().map(|x| Piece { b: target.eval(x), w: w.clone() }).collect();
    DcComponent::new(kind, cover.centers().to_vec(), pieces)
}

/// Min-convex upper approximation `min_k f(c_k) + t1 lambda ||x - c_k||_kind`,
/// built as the negation of the lower construction for `-f`.
pub fn min_convex_upper(target: &TargetFunction, cover: &CoverSpec, kind: FeatureKind) -> Result<DcModel> {
    Ok(DcModel::complement(mcshane_lower(&target.negated(), cover, kind)?))
}

/// `max_k v_k + g_k.(x - c_k) - s ||x - c_k||^2`, or for the upper form
/// `min_k v_k + g_k.(x - c_k) + s ||x - c_k||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnvelope {
    centers: Vec<Vec<f64>>,
    values: Vec<f64>,
    slopes: Vec<Vec<f64>>,
    curvature: f64,
    upper: bool,
}

impl QuadraticEnvelope {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn is_upper(&self) -> bool {
        self.upper
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut best = if self.upper { f64::INFINITY } else { f64::NEG_INFINITY };
        for ((c, v), g) in self.centers.iter().zip(&self.values).zip(&self.slopes) {
            let mut lin = *v;
            let mut sq = 0.0;
            for j in 0..c.len() {
                let diff = x[j] - c[j];
                lin += g[j] * diff;
                sq += diff * diff;
            }
            if self.upper {
                best = best.min(lin + self.curvature * sq);
            } else {
                best = best.max(lin - self.curvature * sq);
            }
        }
        best
    }
}

fn gradients(target: &TargetFunction, cover: &CoverSpec) -> Result<Vec<Vec<f64>>> {
    let d = cover.d();
    cover
        .centers()
        .iter()
        .map(|c| {
            let g = target.grad(c).ok_or_else(|| DcfError::InvalidArgument("construction needs a gradient".into()))?;
            if g.len() != d {
                return Err(DcfError::DimensionMismatch { expected: d, got: g.len() });
            }
            Ok(g)
        })
        .collect()
}

fn smoothness_of(target: &TargetFunction) -> Result<f64> {
    target.smoothness().ok_or_else(|| DcfError::InvalidArgument("construction needs a smoothness constant".into()))
}

fn smooth_envelope(target: &TargetFunction, cover: &CoverSpec, upper: bool) -> Result<QuadraticEnvelope> {
    let curvature = smoothness_of(target)?;
    let slopes = gradients(target, cover)?;
    Ok(QuadraticEnvelope {
        centers: cover.centers().to_vec(),
        values: cover.centers().iter().map(|c| target.eval(c)).collect(),
        slopes,
        curvature,
        upper,
    })
}

fn quad_envelope(target: &TargetFunction, cover: &CoverSpec, upper: bool) -> Result<QuadraticEnvelope> {
    if cover.eps() <= 0.0 {
        return Err(DcfError::InvalidArgument("quadratic construction needs eps > 0".into()));
    }
    Ok(QuadraticEnvelope {
        centers: cover.centers().to_vec(),
        values: cover.centers().iter().map(|c| target.eval(c)).collect(),
        slopes: vec![vec![0.0; cover.d()]; cover.centers().len()],
        curvature: target.lipschitz() / cover.eps(),
        upper,
    })
}

/// Taylor lower bound for a smooth target; `0 <= f - lower <= 2 nu eps^2`.
pub fn smooth_lower(target: &TargetFunction, cover: &CoverSpec) -> Result<QuadraticEnvelope> {
    smooth_envelope(target, cover, false)
}

/// Taylor upper bound for a smooth target; `0 <= upper - f <= 2 nu eps^2`.
pub fn smooth_upper(target: &TargetFunction, cover: &CoverSpec) -> Result<QuadraticEnvelope> {
    smooth_envelope(target, cover, true)
}

/// `max_k f(c_k) - (lambda/eps) ||x - c_k||^2`; `-lambda eps/4 <= f - lower <= 2 lambda eps`.
pub fn quad_lower(target: &TargetFunction, cover: &CoverSpec) -> Result<QuadraticEnvelope> {
    quad_envelope(target, cover, false)
}

/// `min_k f(c_k) + (lambda/eps) ||x - c_k||^2`.
pub fn quad_upper(target: &TargetFunction, cover: &CoverSpec) -> Result<QuadraticEnvelope> {
    quad_envelope(target, cover, true)
}

/// `max_k a_k + g_k.x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxAffine {
    biases: Vec<f64>,
    slopes: Vec<Vec<f64>>,
}

impl MaxAffine {
    pub fn new(biases: Vec<f64>, slopes: Vec<Vec<f64>>) -> Result<Self> {
        if biases.is_empty() || biases.len() != slopes.len() {
            return Err(DcfError::InvalidArgument("max-affine needs matching, non-empty parts".into()));
        }
        let d = slopes[0].len();
        if let Some(s) = slopes.iter().find(|s| s.len() != d) {
            return Err(DcfError::DimensionMismatch { expected: d, got: s.len() });
        }
        Ok(Self { biases, slopes })
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn slopes(&self) -> &[Vec<f64>] {
        &self.slopes
    }

    pub fn k(&self) -> usize {
        self.biases.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.biases.iter().zip(&self.slopes).map(|(a, g)| a + dot(g, x)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            biases: self.biases.iter().map(|a| s * a).collect(),
            slopes: self.slopes.iter().map(|g| g.iter().map(|v| s * v).collect()).collect(),
        }
    }
}

/// `m(x) - s ||x||^2` with `m` max-affine.
#[derive(Debug, Clone, PartialEq)]
pub struct WeaklyMaxAffine {
    pub affine: MaxAffine,
    pub curvature: f64,
}

impl WeaklyMaxAffine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.affine.eval(x) - self.curvature * sq_norm(x)
    }
}

/// `pos(x) - neg(x)` with both parts max-affine.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMaxAffine {
    pub pos: MaxAffine,
    pub neg: MaxAffine,
}

impl DeltaMaxAffine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.pos.eval(x) - self.neg.eval(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxMode {
    /// Uses only the Lipschitz constant; needs `eps > 0`.
    Lipschitz,
    /// Uses the gradient and the smoothness constant.
    Smooth,
    /// Whichever of the two gives the smaller error scale.
    Best,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakDeltaApprox {
    pub weakly: WeaklyMaxAffine,
    pub delta: DeltaMaxAffine,
    /// The max-affine square-norm under-estimate with `q - m in [0, eps^2]`.
    pub square_norm: MaxAffine,
    /// `lambda` in Lipschitz mode, `nu eps` in smooth mode.
    pub error_scale: f64,
    pub eps: f64,
    pub mode: ApproxMode,
}

impl WeakDeltaApprox {
    pub fn weakly_band(&self) -> f64 {
        2.0 * self.eps * self.error_scale
    }

    pub fn delta_band(&self) -> f64 {
        3.0 * self.eps * self.error_scale
    }
}

/// `max_k -||c_k||^2 + 2 c_k.x`, the max-affine under-estimate of `||x||^2` on the cover.
pub fn square_norm_max_affine(cover: &CoverSpec) -> MaxAffine {
    let biases = cover.centers().iter().map(|c| -sq_norm(c)).collect();
    let slopes = cover.centers().iter().map(|c| c.iter().map(|v| 2.0 * v).collect()).collect();
    MaxAffine { biases, slopes }
}

/// Weakly max-affine and delta max-affine approximations built from the
/// quadratic lower constructions by expanding `||x - c||^2`.
pub fn weakly_and_delta_max_affine(
    target: &TargetFunction,
    cover: &CoverSpec,
    mode: ApproxMode,
) -> Result<WeakDeltaApprox> {
    let eps = cover.eps();
    let mode = match mode {
        ApproxMode::Best => {
            let smooth_scale = target.smoothness().map(|nu| nu * eps);
            match smooth_scale {
                Some(s) if target.has_grad() && (s < target.lipschitz() || eps <= 0.0) => ApproxMode::Smooth,
                _ => ApproxMode::Lipschitz,
            }
        }
        m => m,
    };
    let d = cover.d();
    let values: Vec<f64> = cover.centers().iter().map(|c| target.eval(c)).collect();
    let (affine, curvature, error_scale) = match mode {
        ApproxMode::Lipschitz => {
            if eps <= 0.0 {
                return Err(DcfError::InvalidArgument("Lipschitz mode needs eps > 0".into()));
            }
            let s = target.lipschitz() / eps;
            let biases = cover.centers().iter().zip(&values).map(|(c, v)| v - s * sq_norm(c)).collect();
            let slopes = cover.centers().iter().map(|c| c.iter().map(|v| 2.0 * s * v).collect()).collect();
            (MaxAffine { biases, slopes }, s, target.lipschitz())
        }
        ApproxMode::Smooth => {
            let s = smoothness_of(target)?;
            let grads = gradients(target, cover)?;
            let mut biases = Vec::with_capacity(values.len());
            let mut slopes = Vec::with_capacity(values.len());
            for ((c, v), g) in cover.centers().iter().zip(&values).zip(&grads) {
                biases.push(v - dot(g, c) - s * sq_norm(c));
                slopes.push((0..d).map(|j| g[j] + 2.0 * s * c[j]).collect());
            }
            (MaxAffine { biases, slopes }, s, s * eps)
        }
        ApproxMode::Best => unreachable!("resolved above"),
    };
    let square_norm = square_norm_max_affine(cover);
    let delta = DeltaMaxAffine { pos: affine.clone(), neg: square_norm.scaled(curvature) };
    Ok(WeakDeltaApprox { weakly: WeaklyMaxAffine { affine, curvature }, delta, square_norm, error_scale, eps, mode })
}

/// First-order lower model `max_k f(c_k) + g_k.(x - c_k)` of a convex target,
/// as a component whose norm-feature weights are zero.
pub fn convex_taylor(target: &TargetFunction, cover: &CoverSpec) -> Result<DcComponent> {
    let grads = gradients(target, cover)?;
    let pieces = cover
        .centers()
        .iter()
        .zip(grads)
        .map(|(c, mut g)| {
            g.push(0.0);
            Piece { b: target.eval(c), w: g }
        })
        .collect();
    DcComponent::new(FeatureKind::L2, cover.centers().to_vec(), pieces)
}

/// Fraction of variance unexplained, `sum (y - yhat)^2 / sum (y - ybar)^2`.
pub fn fvu(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(DcfError::DimensionMismatch { expected: targets.len(), got: predictions.len() });
    }
    if targets.len() < 2 {
        return Err(DcfError::InvalidArgument("fvu needs at least two points".into()));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let total: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if !(total > 0.0) {
        return Err(DcfError::UndefinedFvu);
    }
    let resid: f64 = predictions.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(resid / total)
}

/// `n` equidistant values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Largest pairwise quotient `|f(a) - f(b)| / ||a - b||` (zero for a single point).
pub fn empirical_lipschitz(points: &[Vec<f64>], values: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dist = sq_dist(&points[i], &points[j]).sqrt();
            if dist > 0.0 {
                best = best.max((values[i] - values[j]).abs() / dist);
            }
        }
    }
    best
}
