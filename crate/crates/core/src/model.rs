//! Function representations: max-form components, their partitioned
//! counterparts, max-min-affine blocks, and the model variants built on them.

use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};
use crate::features::{feature_dim_unchecked, phi_into, FeatureKind};
use crate::partition::Dataset;

/// Relative band used to decide whether a piece attains the maximum.
pub const ATTAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub b: f64,
    pub w: Vec<f64>,
}

/// `x -> max_k b_k + w_k . phi(x, c_k)` over `K` centers `c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcComponent {
    kind: FeatureKind,
    centers: Vec<Vec<f64>>,
    pieces: Vec<Piece>,
}

impl DcComponent {
    pub fn new(kind: FeatureKind, centers: Vec<Vec<f64>>, pieces: Vec<Piece>) -> Result<Self> {
        if centers.is_empty() {
            return Err(DcfError::InvalidArgument("a component needs at least one piece".into()));
        }
        if centers.len() != pieces.len() {
            return Err(DcfError::DimensionMismatch { expected: centers.len(), got: pieces.len() });
        }
        let d = centers[0].len();
        if d == 0 {
            return Err(DcfError::InvalidDimension("centers must have dimension >= 1".into()));
        }
        let p = feature_dim_unchecked(kind, d);
        for (c, piece) in centers.iter().zip(&pieces) {
            if c.len() != d {
                return Err(DcfError::DimensionMismatch { expected: d, got: c.len() });
            }
            if piece.w.len() != p {
                return Err(DcfError::DimensionMismatch { expected: p, got: piece.w.len() });
            }
            if !piece.b.is_finite() || piece.w.iter().any(|v| !v.is_finite()) {
                return Err(DcfError::InvalidArgument("non-finite piece parameter".into()));
            }
        }
        Ok(Self { kind, centers, pieces })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn k(&self) -> usize {
        self.pieces.len()
    }

    pub fn d(&self) -> usize {
        self.centers[0].len()
    }

    /// Feature dimension of the slopes.
    pub fn p(&self) -> usize {
        feature_dim_unchecked(self.kind, self.d())
    }

    pub fn num_params(&self) -> usize {
        self.k() * (1 + self.p())
    }

    /// Shifts every bias by `delta`.
    pub fn shift_biases(&mut self, delta: f64) {
        self.pieces.iter_mut().for_each(|p| p.b += delta);
    }

    pub fn mean_bias(&self) -> f64 {
        self.pieces.iter().map(|p| p.b).sum::<f64>() / self.k() as f64
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(DcfError::DimensionMismatch { expected: self.d(), got: x.len() });
        }
        Ok(())
    }

    /// Value of piece `k` at `x`; `buf` must have length `p()`.
    #[inline]
    pub fn piece_value(&self, k: usize, x: &[f64], buf: &mut [f64]) -> f64 {
        phi_into(self.kind, x, &self.centers[k], buf);
        let piece = &self.pieces[k];
        piece.b + dot(&piece.w, buf)
    }

    /// Maximum over pieces, with the argmax (first index among ties).
    pub fn eval_max_with_arg(&self, x: &[f64], buf: &mut [f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 0..self.k() {
            let v = self.piece_value(k, x, buf);
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    }

    pub fn eval_max(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut buf = vec![0.0; self.p()];
        Ok(self.eval_max_with_arg(x, &mut buf).0)
    }

    /// Evaluates only the piece of cell `label`: the partitioned form.
    pub fn eval_partitioned(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_point(x)?;
        if label >= self.k() {
            return Err(DcfError::LabelOutOfRange { label, k: self.k() });
        }
        let mut buf = vec![0.0; self.p()];
        Ok(self.piece_value(label, x, &mut buf))
    }

    /// Largest Euclidean slope norm.
    pub fn lip_stat(&self) -> f64 {
        self.pieces.iter().map(|p| norm2(&p.w)).fold(0.0, f64::max)
    }

    /// Indices of pieces attaining the maximum at one or more rows.
    pub fn active_pieces<'a>(&self, rows: impl Iterator<Item = &'a [f64]>) -> Vec<usize> {
        let mut keep = vec![false; self.k()];
        let mut buf = vec![0.0; self.p()];
        let mut vals = vec![0.0; self.k()];
        for x in rows {
            let mut m = f64::NEG_INFINITY;
            for (k, v) in vals.iter_mut().enumerate() {
                *v = self.piece_value(k, x, &mut buf);
                m = m.max(*v);
            }
            let band = ATTAIN_TOL * (1.0 + m.abs());
            for (k, &v) in vals.iter().enumerate() {
                if v >= m - band {
                    keep[k] = true;
                }
            }
        }
        (0..self.k()).filter(|&k| keep[k]).collect()
    }

    /// Drops pieces that never attain the maximum on the rows of `data`.
    pub fn prune(&self, data: &Dataset) -> DcComponent {
        self.prune_rows(data.rows())
    }

    pub fn prune_rows<'a>(&self, rows: impl Iterator<Item = &'a [f64]>) -> DcComponent {
        let keep = self.active_pieces(rows);
        self.select(&keep)
    }

    pub(crate) fn select(&self, keep: &[usize]) -> DcComponent {
        DcComponent {
            kind: self.kind,
            centers: keep.iter().map(|&k| self.centers[k].clone()).collect(),
            pieces: keep.iter().map(|&k| self.pieces[k].clone()).collect(),
        }
    }

    /// Rewrites a max-norm component with non-positive norm coefficients as
    /// a max of minima over the `2d` signed coordinate directions.
    pub fn to_max_min_affine(&self) -> Result<MaxMinAffine> {
        if self.kind != FeatureKind::Linf {
            return Err(DcfError::InvalidArgument("max-min-affine conversion requires the max-norm feature".into()));
        }
        let d = self.d();
        let mut blocks = Vec::with_capacity(self.k());
        for (c, piece) in self.centers.iter().zip(&self.pieces) {
            let (u, v) = (&piece.w[..d], piece.w[d]);
            if v > 0.0 {
                return Err(DcfError::ConstraintViolation(format!("norm coefficient {v} is positive")));
            }
            let mut inner = Vec::with_capacity(2 * d);
            for j in 0..d {
                for s in [-1.0, 1.0] {
                    let mut slope = u.to_vec();
                    slope[j] += v * s;
                    let bias = piece.b - dot(&slope, c);
                    inner.push(AffinePiece { bias, slope });
                }
            }
            blocks.push(inner);
        }
        MaxMinAffine::new(blocks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub bias: f64,
    pub slope: Vec<f64>,
}

/// `x -> max_k min_l bias_kl + slope_kl . x` with `2d` inner pieces per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinAffine {
    blocks: Vec<Vec<AffinePiece>>,
}

impl MaxMinAffine {
    pub fn new(blocks: Vec<Vec<AffinePiece>>) -> Result<Self> {
        let first = blocks
            .first()
            .and_then(|b| b.first())
            .ok_or_else(|| DcfError::InvalidArgument("max-min-affine needs a block".into()))?;
        let d = first.slope.len();
        if d == 0 {
            return Err(DcfError::InvalidDimension("slopes must have dimension >= 1".into()));
        }
        for block in &blocks {
            if block.len() != 2 * d {
                return Err(DcfError::DimensionMismatch { expected: 2 * d, got: block.len() });
            }
            for p in block {
                if p.slope.len() != d {
                    return Err(DcfError::DimensionMismatch { expected: d, got: p.slope.len() });
                }
                if !p.bias.is_finite() || p.slope.iter().any(|v| !v.is_finite()) {
                    return Err(DcfError::InvalidArgument("non-finite affine parameter".into()));
                }
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<AffinePiece>] {
        &self.blocks
    }

    pub fn d(&self) -> usize {
        self.blocks[0][0].slope.len()
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.len() * 2 * self.d() * (1 + self.d())
    }

    #[inline]
    pub fn block_value(&self, k: usize, x: &[f64]) -> f64 {
        self.blocks[k].iter().map(|p| p.bias + dot(&p.slope, x)).fold(f64::INFINITY, f64::min)
    }

    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        (0..self.k()).map(|k| self.block_value(k, x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(DcfError::DimensionMismatch { expected: self.d(), got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn lip_stat(&self) -> f64 {
        self.blocks.iter().flatten().map(|p| norm2(&p.slope)).fold(0.0, f64::max)
    }

    /// Keeps blocks attaining the outer maximum at one or more rows.
    pub fn prune_rows<'a>(&self, rows: impl Iterator<Item = &'a [f64]>) -> MaxMinAffine {
        let mut keep = vec![false; self.k()];
        let mut vals = vec![0.0; self.k()];
        for x in rows {
            let mut m = f64::NEG_INFINITY;
            for (k, v) in vals.iter_mut().enumerate() {
                *v = self.block_value(k, x);
                m = m.max(*v);
            }
            let band = ATTAIN_TOL * (1.0 + m.abs());
            for (k, &v) in vals.iter().enumerate() {
                if v >= m - band {
                    keep[k] = true;
                }
            }
        }
        MaxMinAffine { blocks: self.blocks.iter().zip(&keep).filter(|(_, &k)| k).map(|(b, _)| b.clone()).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Single,
    Complement,
    Symmetric,
    MaxMinAffine,
    ConvexMaxAffine,
    ConvexNorm,
    ConvexPlus,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Self::Single,
        Self::Complement,
        Self::Symmetric,
        Self::MaxMinAffine,
        Self::ConvexMaxAffine,
        Self::ConvexNorm,
        Self::ConvexPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Complement => "complement",
            Self::Symmetric => "symmetric",
            Self::MaxMinAffine => "max_min_affine",
            Self::ConvexMaxAffine => "convex_max_affine",
            Self::ConvexNorm => "convex_norm",
            Self::ConvexPlus => "convex_plus",
        }
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Self::ConvexMaxAffine | Self::ConvexNorm | Self::ConvexPlus)
    }

    pub fn check_kind(self, kind: FeatureKind) -> Result<()> {
        let ok = match self {
            Self::MaxMinAffine => kind == FeatureKind::Linf,
            Self::ConvexPlus => kind == FeatureKind::Plus,
            Self::ConvexMaxAffine | Self::ConvexNorm => kind != FeatureKind::Plus,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(DcfError::InvalidArgument(format!(
                "variant {} is incompatible with feature kind {}",
                self.name(),
                kind.name()
            )))
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .or(match norm.as_str() {
                "mma" => Some(Variant::MaxMinAffine),
                "sym" => Some(Variant::Symmetric),
                "comp" => Some(Variant::Complement),
                _ => None,
            })
            .ok_or_else(|| DcfError::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

/// Functional form carried by a [`DcModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Max(DcComponent),
    Difference { pos: DcComponent, neg: DcComponent },
    MaxMin(MaxMinAffine),
}

/// Per-column affine maps between raw and internal coordinates:
/// `internal = (raw - shift) / scale` for covariates and
/// `raw = internal * y_scale + y_shift` for responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_shift: f64,
    pub y_scale: f64,
}

impl Standardization {
    /// Column means and unit sample variance (n - 1 denominator); constant
    /// columns keep scale 1.
    pub fn fit(data: &Dataset) -> Self {
        let n = data.n() as f64;
        let d = data.d();
        let mut x_shift = vec![0.0; d];
        for row in data.rows() {
            for (m, v) in x_shift.iter_mut().zip(row) {
                *m += v;
            }
        }
        x_shift.iter_mut().for_each(|m| *m /= n);
        let mut x_scale = vec![0.0; d];
        for row in data.rows() {
            for j in 0..d {
                let c = row[j] - x_shift[j];
                x_scale[j] += c * c;
            }
        }
        let denom = (n - 1.0).max(1.0);
        x_scale.iter_mut().for_each(|s| *s = positive_scale((*s / denom).sqrt()));
        let y_shift = data.y_mean();
        let y_var = data.y().iter().map(|y| (y - y_shift).powi(2)).sum::<f64>() / denom;
        Self { x_shift, x_scale, y_shift, y_scale: positive_scale(y_var.sqrt()) }
    }

    pub fn identity(d: usize) -> Self {
        Self { x_shift: vec![0.0; d], x_scale: vec![1.0; d], y_shift: 0.0, y_scale: 1.0 }
    }

    pub fn map_x_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.x_shift[j]) / self.x_scale[j];
        }
    }

    pub fn map_dataset(&self, data: &Dataset) -> Dataset {
        let d = data.d();
        let mut x = vec![0.0; data.x().len()];
        for (out, row) in x.chunks_exact_mut(d).zip(data.rows()) {
            self.map_x_into(row, out);
        }
        let y = data.y().iter().map(|v| (v - self.y_shift) / self.y_scale).collect();
        Dataset::new(x, y, d).expect("affine image of a valid dataset is valid")
    }

    pub fn unmap_y(&self, v: f64) -> f64 {
        v * self.y_scale + self.y_shift
    }
}

pub(crate) fn positive_scale(s: f64) -> f64 {
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcModel {
    variant: Variant,
    body: Body,
    offset: f64,
    standardization: Option<Standardization>,
}

impl DcModel {
    pub fn new(variant: Variant, body: Body, offset: f64, standardization: Option<Standardization>) -> Result<Self> {
        let shape_ok = match (&body, variant) {
            (Body::Difference { .. }, Variant::Symmetric) => true,
            (Body::MaxMin(_), Variant::MaxMinAffine) => true,
            (Body::Max(_), v) => !matches!(v, Variant::Symmetric | Variant::MaxMinAffine),
            _ => false,
        };
        if !shape_ok {
            return Err(DcfError::InvalidArgument(format!("body shape does not match variant {}", variant.name())));
        }
        if !offset.is_finite() {
            return Err(DcfError::InvalidArgument("non-finite offset".into()));
        }
        let d = match &body {
            Body::Max(c) => c.d(),
            Body::Difference { pos, neg } => {
                if pos.kind() != neg.kind() || pos.d() != neg.d() {
                    return Err(DcfError::InvalidArgument("symmetric components must share kind and dimension".into()));
                }
                pos.d()
            }
            Body::MaxMin(m) => m.d(),
        };
        if let Some(s) = &standardization {
            if s.x_shift.len() != d || s.x_scale.len() != d {
                return Err(DcfError::DimensionMismatch { expected: d, got: s.x_shift.len() });
            }
            if s.x_scale.iter().any(|v| !(*v > 0.0)) || !(s.y_scale > 0.0) {
                return Err(DcfError::InvalidArgument("scales must be positive".into()));
            }
        }
        if let Body::Max(c) = &body {
            variant.check_kind(c.kind())?;
            check_convexity(variant, c)?;
        }
        Ok(Self { variant, body, offset, standardization })
    }

    pub fn single(comp: DcComponent) -> Self {
        Self::new(Variant::Single, Body::Max(comp), 0.0, None).expect("single is always valid")
    }

    pub fn complement(comp: DcComponent) -> Self {
        Self::new(Variant::Complement, Body::Max(comp), 0.0, None).expect("complement is always valid")
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn kind(&self) -> FeatureKind {
        match &self.body {
            Body::Max(c) => c.kind(),
            Body::Difference { pos, .. } => pos.kind(),
            Body::MaxMin(_) => FeatureKind::Linf,
        }
    }

    pub fn d(&self) -> usize {
        match &self.body {
            Body::Max(c) => c.d(),
            Body::Difference { pos, .. } => pos.d(),
            Body::MaxMin(m) => m.d(),
        }
    }

    pub fn num_params(&self) -> usize {
        1 + match &self.body {
            Body::Max(c) => c.num_params(),
            Body::Difference { pos, neg } => pos.num_params() + neg.num_params(),
            Body::MaxMin(m) => m.num_params(),
        }
    }

    /// Number of max-pieces (or max-min blocks) summed over components.
    pub fn num_pieces(&self) -> usize {
        match &self.body {
            Body::Max(c) => c.k(),
            Body::Difference { pos, neg } => pos.k() + neg.k(),
            Body::MaxMin(m) => m.k(),
        }
    }

    pub(crate) fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub(crate) fn with_standardization(mut self, s: Option<Standardization>) -> Self {
        self.standardization = s;
        self
    }

    /// Value in internal coordinates (no standardization applied).
    pub fn eval_internal(&self, z: &[f64], buf: &mut [f64]) -> f64 {
        let body = match &self.body {
            Body::Max(c) => {
                let v = c.eval_max_with_arg(z, buf).0;
                if self.variant == Variant::Complement {
                    -v
                } else {
                    v
                }
            }
            Body::Difference { pos, neg } => pos.eval_max_with_arg(z, buf).0 - neg.eval_max_with_arg(z, buf).0,
            Body::MaxMin(m) => m.eval_unchecked(z),
        };
        self.offset + body
    }

    fn scratch_len(&self) -> usize {
        match &self.body {
            Body::Max(c) => c.p(),
            Body::Difference { pos, .. } => pos.p(),
            Body::MaxMin(_) => 0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(DcfError::DimensionMismatch { expected: self.d(), got: x.len() });
        }
        Ok(self.evaluator().eval(x))
    }

    /// Reusable evaluator holding scratch buffers.
    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator { model: self, z: vec![0.0; self.d()], buf: vec![0.0; self.scratch_len()] }
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.d() != self.d() {
            return Err(DcfError::DimensionMismatch { expected: self.d(), got: data.d() });
        }
        let mut ev = self.evaluator();
        Ok(data.rows().map(|r| ev.eval(r)).collect())
    }

    /// Largest Euclidean slope norm over all pieces of all components.
    pub fn lip_stat(&self) -> f64 {
        match &self.body {
            Body::Max(c) => c.lip_stat(),
            Body::Difference { pos, neg } => pos.lip_stat().max(neg.lip_stat()),
            Body::MaxMin(m) => m.lip_stat(),
        }
    }

    /// Resets the offset so the mean prediction over `data` equals the mean response.
    pub fn center(&self, data: &Dataset) -> Result<DcModel> {
        let preds = self.predict(data)?;
        let mean_pred = preds.iter().sum::<f64>() / preds.len() as f64;
        let y_scale = self.standardization.as_ref().map_or(1.0, |s| s.y_scale);
        let mut out = self.clone();
        out.offset += (data.y_mean() - mean_pred) / y_scale;
        Ok(out)
    }
}

pub struct Evaluator<'a> {
    model: &'a DcModel,
    z: Vec<f64>,
    buf: Vec<f64>,
}

impl Evaluator<'_> {
    /// Raw-coordinate value; `x` must have the model dimension.
    pub fn eval(&mut self, x: &[f64]) -> f64 {
        match &self.model.standardization {
            Some(s) => {
                s.map_x_into(x, &mut self.z);
                s.unmap_y(self.model.eval_internal(&self.z, &mut self.buf))
            }
            None => self.model.eval_internal(x, &mut self.buf),
        }
    }
}

fn check_convexity(variant: Variant, comp: &DcComponent) -> Result<()> {
    let d = comp.d();
    for (k, piece) in comp.pieces().iter().enumerate() {
        let ok = match variant {
            Variant::ConvexMaxAffine => piece.w[d] == 0.0,
            Variant::ConvexNorm => piece.w[d] >= 0.0,
            Variant::ConvexPlus => (0..d).all(|j| piece.w[j] >= -piece.w[d + j]),
            _ => true,
        };
        if !ok {
            return Err(DcfError::ConstraintViolation(format!(
                "piece {k} breaks the {} convexity restriction",
                variant.name()
            )));
        }
    }
    Ok(())
}

/// Subtracts the average of the two components' mean biases from every bias,
/// so the mean biases of the components sum to zero. Model values are unchanged.
pub fn symmetric_bias_center(model: &DcModel) -> Result<DcModel> {
    let Body::Difference { pos, neg } = &model.body else {
        return Err(DcfError::WrongVariant { expected: "symmetric", got: model.variant.name() });
    };
    let shift = 0.5 * (pos.mean_bias() + neg.mean_bias());
    let (mut pos, mut neg) = (pos.clone(), neg.clone());
    pos.shift_biases(-shift);
    neg.shift_biases(-shift);
    Ok(DcModel { body: Body::Difference { pos, neg }, ..model.clone() })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::constants;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_component(rng: &mut ChaCha8Rng, kind: FeatureKind, d: usize, k: usize) -> DcComponent {
        let p = feature_dim_unchecked(kind, d);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let pieces = (0..k)
            .map(|_| Piece { b: rng.random_range(-1.0..1.0), w: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect() })
            .collect();
        DcComponent::new(kind, centers, pieces).unwrap()
    }

    fn constant(b: f64, d: usize) -> DcComponent {
        DcComponent::new(FeatureKind::L2, vec![vec![0.0; d]], vec![Piece { b, w: vec![0.0; d + 1] }]).unwrap()
    }

    #[test]
    fn eval_max_examples() {
        let c = constant(1.0, 2);
        assert_eq!(c.eval_max(&[3.0, -7.0]).unwrap(), 1.0);
        let neg_abs = DcComponent::new(
            FeatureKind::L2,
            vec![vec![0.0], vec![2.0]],
            vec![Piece { b: 0.0, w: vec![0.0, -1.0] }, Piece { b: 0.0, w: vec![0.0, -1.0] }],
        )
        .unwrap();
        assert_eq!(neg_abs.eval_max(&[1.0]).unwrap(), -1.0);
        assert_eq!(neg_abs.eval_max(&[0.0]).unwrap(), 0.0);
        assert!(neg_abs.eval_max(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn partitioned_examples_and_domination() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in FeatureKind::ALL {
            let c = random_component(&mut rng, kind, 3, 6);
            for k in 0..c.k() {
                assert_eq!(c.eval_partitioned(&c.centers()[k].clone(), k).unwrap(), c.pieces()[k].b);
            }
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let m = c.eval_max(&x).unwrap();
                for k in 0..c.k() {
                    assert!(m >= c.eval_partitioned(&x, k).unwrap());
                }
            }
            assert!(matches!(c.eval_partitioned(&[0.0; 3], 6), Err(DcfError::LabelOutOfRange { .. })));
        }
        let one = random_component(&mut rng, FeatureKind::L1, 2, 1);
        let x = [0.4, -0.1];
        assert_eq!(one.eval_max(&x).unwrap(), one.eval_partitioned(&x, 0).unwrap());
    }

    #[test]
    fn model_eval_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_component(&mut rng, FeatureKind::Linf, 2, 4);
        let sym =
            DcModel::new(Variant::Symmetric, Body::Difference { pos: c.clone(), neg: c.clone() }, 3.0, None).unwrap();
        let comp = DcModel::complement(constant(1.0, 2));
        let single = DcModel::single(c.clone());
        for i in 0..100 {
            let x = [i as f64 / 25.0 - 2.0, 1.0 - i as f64 / 50.0];
            assert_eq!(sym.eval(&x).unwrap(), 3.0);
            assert_eq!(comp.eval(&x).unwrap(), -1.0);
            assert_eq!(single.eval(&x).unwrap(), c.eval_max(&x).unwrap());
        }
        assert!(DcModel::new(Variant::Symmetric, Body::Max(c.clone()), 0.0, None).is_err());
    }

    #[test]
    fn lip_stat_examples() {
        assert_eq!(constant(2.0, 2).lip_stat(), 0.0);
        let c = DcComponent::new(FeatureKind::L2, vec![vec![0.0, 0.0]], vec![Piece { b: 0.0, w: vec![3.0, 4.0, 0.0] }])
            .unwrap();
        assert_eq!(c.lip_stat(), 5.0);
        let sym =
            DcModel::new(Variant::Symmetric, Body::Difference { pos: c.clone(), neg: constant(0.0, 2) }, 0.0, None)
                .unwrap();
        assert_eq!(sym.lip_stat(), 5.0);
    }

    #[test]
    fn component_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in FeatureKind::ALL {
            for d in [1, 2, 4] {
                let c = random_component(&mut rng, kind, d, 5);
                let bound = c.lip_stat() * constants(kind, d).unwrap().c_phi;
                for _ in 0..300 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let dist = norm2(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
                    let diff = (c.eval_max(&x).unwrap() - c.eval_max(&y).unwrap()).abs();
                    assert!(diff <= bound * dist + 1e-12, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn prune_removes_dominated_and_keeps_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = random_component(&mut rng, FeatureKind::L2, 2, 5);
        let mut pieces = c.pieces().to_vec();
        pieces[2].b = -1e9;
        c = DcComponent::new(FeatureKind::L2, c.centers().to_vec(), pieces).unwrap();
        let rows: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = Dataset::new(rows, vec![0.0; 100], 2).unwrap();
        let pruned = c.prune(&data);
        assert!(pruned.k() < c.k());
        assert!(!pruned.pieces().iter().any(|p| p.b == -1e9));
        for x in data.rows() {
            assert_eq!(pruned.eval_max(x).unwrap(), c.eval_max(x).unwrap());
        }
        let one = constant(1.0, 2);
        assert_eq!(one.prune(&data), one);
        let pruned_again = pruned.prune(&data);
        assert_eq!(pruned_again, pruned);
    }

    #[test]
    fn center_examples() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let m = DcModel::single(constant(0.0, 1)).center(&data).unwrap();
        assert_eq!(m.offset(), 2.5);
        let again = m.center(&data).unwrap();
        assert!((again.offset() - m.offset()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_component(&mut rng, FeatureKind::Plus, 3, 7);
        let x: Vec<f64> = (0..150).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let data = Dataset::new(x, y, 3).unwrap();
        let m = DcModel::single(c).center(&data).unwrap();
        let mean = m.predict(&data).unwrap().iter().sum::<f64>() / 50.0;
        assert!((mean - data.y_mean()).abs() < 1e-10);
    }

    #[test]
    fn max_min_affine_examples() {
        let c =
            DcComponent::new(FeatureKind::Linf, vec![vec![0.0]], vec![Piece { b: 0.0, w: vec![1.0, -1.0] }]).unwrap();
        let m = c.to_max_min_affine().unwrap();
        for i in -50..=50 {
            let x = i as f64 / 10.0;
            let expected = x - x.abs();
            assert!((m.eval(&[x]).unwrap() - expected).abs() < 1e-15);
            assert!((m.eval(&[x]).unwrap() - 2f64.mul_add(x, 0.0).min(0.0)).abs() < 1e-15);
        }

        let flat = DcComponent::new(
            FeatureKind::Linf,
            vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
            vec![Piece { b: 0.3, w: vec![1.0, 2.0, 0.0] }, Piece { b: -0.2, w: vec![-1.0, 0.5, 0.0] }],
        )
        .unwrap();
        let mf = flat.to_max_min_affine().unwrap();
        for block in mf.blocks() {
            assert!(block.iter().all(|p| p == &block[0]));
        }
        let bad =
            DcComponent::new(FeatureKind::Linf, vec![vec![0.0]], vec![Piece { b: 0.0, w: vec![1.0, 0.5] }]).unwrap();
        assert!(matches!(bad.to_max_min_affine(), Err(DcfError::ConstraintViolation(_))));
        let wrong_kind = constant(1.0, 1);
        assert!(wrong_kind.to_max_min_affine().is_err());
    }

    #[test]
    fn max_min_affine_grid_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let d = rng.random_range(1..=3);
            let k = rng.random_range(1..=5);
            let mut c = random_component(&mut rng, FeatureKind::Linf, d, k);
            let pieces: Vec<Piece> = c
                .pieces()
                .iter()
                .map(|p| {
                    let mut q = p.clone();
                    q.w[d] = -q.w[d].abs();
                    q
                })
                .collect();
            c = DcComponent::new(FeatureKind::Linf, c.centers().to_vec(), pieces).unwrap();
            let m = c.to_max_min_affine().unwrap();
            for _ in 0..500 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert!((m.eval(&x).unwrap() - c.eval_max(&x).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn symmetric_bias_centering() {
        let mk = |bs: &[f64]| {
            DcComponent::new(
                FeatureKind::L2,
                bs.iter().enumerate().map(|(i, _)| vec![i as f64]).collect(),
                bs.iter().map(|&b| Piece { b, w: vec![0.5, -0.25] }).collect(),
            )
            .unwrap()
        };
        let model = DcModel::new(
            Variant::Symmetric,
            Body::Difference { pos: mk(&[1.0, 3.0]), neg: mk(&[2.0, 2.0]) },
            0.7,
            None,
        )
        .unwrap();
        let centered = symmetric_bias_center(&model).unwrap();
        let Body::Difference { pos, neg } = centered.body() else { unreachable!() };
        assert!((pos.mean_bias() + neg.mean_bias()).abs() < 1e-12);
        assert_eq!(pos.pieces()[0].b, -1.0);
        for i in 0..50 {
            let x = [i as f64 / 7.0 - 3.0];
            assert!((centered.eval(&x).unwrap() - model.eval(&x).unwrap()).abs() < 1e-12);
        }
        let twice = symmetric_bias_center(&centered).unwrap();
        assert_eq!(twice, centered);
        assert!(symmetric_bias_center(&DcModel::single(mk(&[1.0]))).is_err());
    }

    #[test]
    fn convexity_restrictions_are_validated() {
        let bad_norm =
            DcComponent::new(FeatureKind::L2, vec![vec![0.0]], vec![Piece { b: 0.0, w: vec![1.0, -0.1] }]).unwrap();
        assert!(DcModel::new(Variant::ConvexNorm, Body::Max(bad_norm.clone()), 0.0, None).is_err());
        assert!(DcModel::new(Variant::ConvexMaxAffine, Body::Max(bad_norm), 0.0, None).is_err());
        let plus =
            DcComponent::new(FeatureKind::Plus, vec![vec![0.0]], vec![Piece { b: 0.0, w: vec![1.0, -1.5] }]).unwrap();
        assert!(DcModel::new(Variant::ConvexPlus, Body::Max(plus), 0.0, None).is_err());
    }

    #[test]
    fn standardization_round_trip() {
        let data = Dataset::new(vec![1.0, 10.0, 3.0, 30.0, 5.0, 50.0], vec![2.0, 4.0, 9.0], 2).unwrap();
        let s = Standardization::fit(&data);
        let mapped = s.map_dataset(&data);
        for (raw, m) in data.y().iter().zip(mapped.y()) {
            assert!((s.unmap_y(*m) - raw).abs() < 1e-12 * raw.abs().max(1.0));
        }
        let col0: Vec<f64> = mapped.rows().map(|r| r[0]).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        let constant_col = Dataset::new(vec![4.0, 4.0], vec![1.0, 1.0], 1).unwrap();
        let s = Standardization::fit(&constant_col);
        assert_eq!((s.x_scale[0], s.y_scale), (1.0, 1.0));
    }
}
