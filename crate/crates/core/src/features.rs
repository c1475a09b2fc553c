//! Feature maps that lift max-affine functions into delta-convex classes.
//!
//! For the norm kinds the feature vector of `x` relative to a center `xhat`
//! is `[x - xhat, ||x - xhat||]`; for [`FeatureKind::Plus`] it is
//! `[(x - xhat)_+, (xhat - x)_+]`. Every slope vector in the crate is indexed
//! in this layout.

use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    L1,
    L2,
    Linf,
    Plus,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [Self::L1, Self::L2, Self::Linf, Self::Plus];

    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Linf => "linf",
            Self::Plus => "plus",
        }
    }

    /// True for the kinds whose last feature coordinate is a norm.
    pub fn has_norm_feature(self) -> bool {
        !matches!(self, Self::Plus)
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Self::L1),
            "l2" | "2" => Ok(Self::L2),
            "linf" | "inf" => Ok(Self::Linf),
            "plus" | "+" => Ok(Self::Plus),
            other => Err(DcfError::InvalidArgument(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// Norm-equivalence and Lipschitz factors of a feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConstants {
    /// `||phi(x, xhat)|| <= c_phi * ||x - xhat||`.
    pub c_phi: f64,
    /// `||phi(x, a) - phi(x, b)|| <= lip_phi * ||a - b||`.
    pub lip_phi: f64,
    /// `t0 * ||v||_kind <= ||v||_2`.
    pub t0: f64,
    /// `||v||_2 <= t1 * ||v||_kind`.
    pub t1: f64,
    pub d_feat: usize,
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(DcfError::InvalidDimension("covariate dimension must be at least 1".into()));
    }
    Ok(())
}

pub fn feature_dim(kind: FeatureKind, d: usize) -> Result<usize> {
    check_dim(d)?;
    Ok(feature_dim_unchecked(kind, d))
}

#[inline]
pub(crate) fn feature_dim_unchecked(kind: FeatureKind, d: usize) -> usize {
    match kind {
        FeatureKind::Plus => 2 * d,
        _ => d + 1,
    }
}

pub fn constants(kind: FeatureKind, d: usize) -> Result<FeatureConstants> {
    check_dim(d)?;
    let df = d as f64;
    let (c_phi, lip_phi) = match kind {
        FeatureKind::L1 => ((1.0 + df).sqrt(), 1.0 + df.sqrt()),
        FeatureKind::L2 | FeatureKind::Linf => (2f64.sqrt(), 2.0),
        FeatureKind::Plus => (1.0, 2.0),
    };
    let (t0, t1) = match kind {
        FeatureKind::L1 | FeatureKind::Plus => (1.0 / df.sqrt(), 1.0),
        FeatureKind::L2 => (1.0, 1.0),
        FeatureKind::Linf => (1.0, df.sqrt()),
    };
    Ok(FeatureConstants { c_phi, lip_phi, t0, t1, d_feat: feature_dim_unchecked(kind, d) })
}

/// The norm associated with `kind`; `Plus` uses the 1-norm.
pub fn kind_norm(kind: FeatureKind, v: &[f64]) -> f64 {
    match kind {
        FeatureKind::L1 | FeatureKind::Plus => v.iter().map(|a| a.abs()).sum(),
        FeatureKind::L2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
        FeatureKind::Linf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
    }
}

pub fn phi(kind: FeatureKind, x: &[f64], xhat: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len())?;
    if x.len() != xhat.len() {
        return Err(DcfError::DimensionMismatch { expected: x.len(), got: xhat.len() });
    }
    let mut out = vec![0.0; feature_dim_unchecked(kind, x.len())];
    phi_into(kind, x, xhat, &mut out);
    Ok(out)
}

/// Writes `phi(kind, x, xhat)` into `out`. Lengths are the caller's responsibility.
#[inline]
pub fn phi_into(kind: FeatureKind, x: &[f64], xhat: &[f64], out: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(xhat.len(), d);
    debug_assert_eq!(out.len(), feature_dim_unchecked(kind, d));
    match kind {
        FeatureKind::Plus => {
            for j in 0..d {
                let diff = x[j] - xhat[j];
                out[j] = diff.max(0.0);
                out[d + j] = (-diff).max(0.0);
            }
        }
        _ => {
            for j in 0..d {
                out[j] = x[j] - xhat[j];
            }
            out[d] = kind_norm(kind, &out[..d]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn l2(v: &[f64]) -> f64 {
        v.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn dims() {
        assert_eq!(feature_dim(FeatureKind::L2, 3).unwrap(), 4);
        assert_eq!(feature_dim(FeatureKind::Plus, 3).unwrap(), 6);
        assert_eq!(feature_dim(FeatureKind::L1, 1).unwrap(), 2);
        assert!(matches!(feature_dim(FeatureKind::Linf, 0), Err(DcfError::InvalidDimension(_))));
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(FeatureKind::L2, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(phi(FeatureKind::Plus, &[1.0, -2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(phi(FeatureKind::L1, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0, 7.0]);
        let x = [0.3, -1.2, 5.0];
        for kind in FeatureKind::ALL {
            assert!(phi(kind, &x, &x).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(phi(FeatureKind::Linf, &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn constants_examples() {
        for d in [1, 3, 7] {
            let c = constants(FeatureKind::L2, d).unwrap();
            assert_eq!(c.c_phi, 2f64.sqrt());
            assert_eq!(c.lip_phi, 2.0);
            let p = constants(FeatureKind::Plus, d).unwrap();
            assert_eq!((p.c_phi, p.lip_phi), (1.0, 2.0));
        }
        let c = constants(FeatureKind::L1, 4).unwrap();
        assert_eq!(c.c_phi, 5f64.sqrt());
        assert_eq!(c.lip_phi, 3.0);
        assert_eq!(c.d_feat, 5);
    }

    #[test]
    fn norm_bound_and_second_argument_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in FeatureKind::ALL {
            for d in [1, 2, 5, 10] {
                let c = constants(kind, d).unwrap();
                for _ in 0..1000 {
                    let x = random_point(&mut rng, d);
                    let a = random_point(&mut rng, d);
                    let b = random_point(&mut rng, d);
                    let diff: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p - q).collect();
                    let pa = phi(kind, &x, &a).unwrap();
                    let pb = phi(kind, &x, &b).unwrap();
                    let lhs = l2(&pa);
                    assert!(lhs <= c.c_phi * l2(&diff) * (1.0 + 1e-12), "{kind:?} d={d}");
                    let dphi: Vec<f64> = pa.iter().zip(&pb).map(|(p, q)| p - q).collect();
                    let dab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
                    assert!(l2(&dphi) <= c.lip_phi * l2(&dab) * (1.0 + 1e-12), "{kind:?} d={d}");
                }
            }
        }
    }

    #[test]
    fn norm_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [FeatureKind::L1, FeatureKind::L2, FeatureKind::Linf] {
            for d in [1, 2, 5, 10] {
                let c = constants(kind, d).unwrap();
                for _ in 0..1000 {
                    let v = random_point(&mut rng, d);
                    let nk = kind_norm(kind, &v);
                    let n2 = l2(&v);
                    assert!(c.t0 * nk <= n2 * (1.0 + 1e-12));
                    assert!(n2 <= c.t1 * nk * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn plus_recovers_l1_and_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [1, 4, 9] {
            for _ in 0..200 {
                let x = random_point(&mut rng, d);
                let xh = random_point(&mut rng, d);
                let p = phi(FeatureKind::Plus, &x, &xh).unwrap();
                let l1: f64 = x.iter().zip(&xh).map(|(a, b)| (a - b).abs()).sum();
                assert!((p.iter().sum::<f64>() - l1).abs() <= 1e-12 * (1.0 + l1));
                for j in 0..d {
                    assert!((p[j] - p[d + j] - (x[j] - xh[j])).abs() <= 1e-12);
                }
            }
        }
    }
}
