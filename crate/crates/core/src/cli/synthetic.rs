//! Synthetic regression problems with known noiseless targets.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DcfError, Result};
use crate::partition::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetId {
    /// Coordinate average of `x sin x` on `[0, 6]^d`.
    Xsinx,
    /// Coordinate average of `max{1-|x-1|, 2-|x-3|, 1-|x-5|/2}` on `[0, 6]^d`.
    PwLinear,
    /// `||x||^2` on `[-1, 1]^d`.
    Normsq,
    /// A seeded sum of ridge functions `a |u.x - t|` on `[-1, 1]^d`.
    RandomLipschitz,
    /// The constant 1 on `[-1, 1]^d`.
    Constant,
}

impl TargetId {
    pub fn name(self) -> &'static str {
        match self {
            Self::Xsinx => "xsinx",
            Self::PwLinear => "pw_linear",
            Self::Normsq => "normsq",
            Self::RandomLipschitz => "random_lipschitz",
            Self::Constant => "constant",
        }
    }
}

impl FromStr for TargetId {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "xsinx" => Ok(Self::Xsinx),
            "pw_linear" | "pwlinear" => Ok(Self::PwLinear),
            "normsq" => Ok(Self::Normsq),
            "random_lipschitz" => Ok(Self::RandomLipschitz),
            "constant" => Ok(Self::Constant),
            other => Err(DcfError::InvalidArgument(format!("unknown target '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Uniform on the target's box.
    #[default]
    Uniform,
    /// Independent normals centered in the box with standard deviation a quarter of its width.
    Gaussian,
}

impl FromStr for CovariateLaw {
    type Err = DcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "gaussian" | "normal" => Ok(Self::Gaussian),
            other => Err(DcfError::InvalidArgument(format!("unknown covariate law '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGen {
    pub target: TargetId,
    pub d: usize,
    pub noise_sigma: f64,
    #[serde(default)]
    pub law: CovariateLaw,
    /// Seed for the random target family; fixed across repetitions.
    #[serde(default)]
    pub target_seed: u64,
}

const RIDGES: usize = 8;

/// The noiseless regression function of a generator.
#[derive(Debug, Clone)]
pub struct NoiselessTarget {
    id: TargetId,
    ridges: Vec<(f64, Vec<f64>, f64)>,
}

fn three_peaks(x: f64) -> f64 {
    (1.0 - (x - 1.0).abs()).max(2.0 - (x - 3.0).abs()).max(1.0 - (x - 5.0).abs() / 2.0)
}

impl NoiselessTarget {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        match self.id {
            TargetId::Xsinx => x.iter().map(|v| v * v.sin()).sum::<f64>() / d,
            TargetId::PwLinear => x.iter().map(|&v| three_peaks(v)).sum::<f64>() / d,
            TargetId::Normsq => x.iter().map(|v| v * v).sum(),
            TargetId::RandomLipschitz => self
                .ridges
                .iter()
                .map(|(a, u, t)| a * (u.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - t).abs())
                .sum(),
            TargetId::Constant => 1.0,
        }
    }
}

impl SyntheticGen {
    pub fn new(target: TargetId, d: usize, noise_sigma: f64, law: CovariateLaw) -> Result<Self> {
        let g = Self { target, d, noise_sigma, law, target_seed: 0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(DcfError::InvalidDimension("synthetic dimension must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DcfError::InvalidArgument("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> (f64, f64) {
        match self.target {
            TargetId::Xsinx | TargetId::PwLinear => (0.0, 6.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn noiseless(&self) -> NoiselessTarget {
        let mut ridges = Vec::new();
        if self.target == TargetId::RandomLipschitz {
            let mut rng = ChaCha8Rng::seed_from_u64(self.target_seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for _ in 0..RIDGES {
                let mut u: Vec<f64> = (0..self.d).map(|_| normal.sample(&mut rng)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                u.iter_mut().for_each(|v| *v /= norm);
                let a = rng.random_range(-1.0..1.0) / RIDGES as f64 * 4.0;
                let t = rng.random_range(-0.8..0.8);
                ridges.push((a, u, t));
            }
        }
        NoiselessTarget { id: self.target, ridges }
    }

    /// Draws `n` covariate rows from the covariate law.
    pub fn covariates(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let (lo, hi) = self.domain();
        match self.law {
            CovariateLaw::Uniform => (0..n * self.d).map(|_| rng.random_range(lo..hi)).collect(),
            CovariateLaw::Gaussian => {
                let normal = Normal::new((lo + hi) / 2.0, (hi - lo) / 4.0).expect("positive std");
                (0..n * self.d).map(|_| normal.sample(rng)).collect()
            }
        }
    }

    /// A noisy sample and the noiseless values at its covariates.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(Dataset, Vec<f64>)> {
        self.validate()?;
        let x = self.covariates(n, rng);
        let f = self.noiseless();
        let clean: Vec<f64> = x.chunks_exact(self.d).map(|r| f.eval(r)).collect();
        let y = if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).expect("positive sigma");
            clean.iter().map(|v| v + noise.sample(rng)).collect()
        } else {
            clean.clone()
        };
        Ok((Dataset::new(x, y, self.d)?, clean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_match_their_formulas() {
        let g = SyntheticGen::new(TargetId::Xsinx, 1, 0.0, CovariateLaw::Uniform).unwrap();
        assert_eq!(g.noiseless().eval(&[2.0]), 2.0 * 2f64.sin());
        let g = SyntheticGen::new(TargetId::PwLinear, 1, 0.0, CovariateLaw::Uniform).unwrap();
        let f = g.noiseless();
        assert_eq!(f.eval(&[1.0]), 1.0);
        assert_eq!(f.eval(&[3.0]), 2.0);
        assert_eq!(f.eval(&[5.0]), 1.0);
        let g = SyntheticGen::new(TargetId::Normsq, 2, 0.0, CovariateLaw::Uniform).unwrap();
        assert_eq!(g.noiseless().eval(&[0.5, -1.0]), 1.25);
    }

    #[test]
    fn sampling_is_seeded_and_in_domain() {
        let g = SyntheticGen::new(TargetId::RandomLipschitz, 3, 0.1, CovariateLaw::Uniform).unwrap();
        let (a, fa) = g.sample(100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (b, fb) = g.sample(100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert_eq!(fa, fb);
        assert!(a.x().iter().all(|v| (-1.0..1.0).contains(v)));
        let g = SyntheticGen::new(TargetId::Constant, 2, 0.0, CovariateLaw::Gaussian).unwrap();
        let (c, _) = g.sample(10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(c.y().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_lipschitz_constant_is_bounded() {
        let g = SyntheticGen::new(TargetId::RandomLipschitz, 2, 0.0, CovariateLaw::Uniform).unwrap();
        let f = g.noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Each ridge is |a|-Lipschitz with |a| < 4 / RIDGES, so the sum is below 4.
        for _ in 0..1000 {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dist = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((f.eval(&p) - f.eval(&q)).abs() <= 4.0 * dist + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SyntheticGen::new(TargetId::Xsinx, 0, 0.1, CovariateLaw::Uniform).is_err());
        assert!(SyntheticGen::new(TargetId::Xsinx, 1, -0.1, CovariateLaw::Uniform).is_err());
        assert!("bogus".parse::<TargetId>().is_err());
        assert_eq!("PW_LINEAR".parse::<TargetId>().unwrap(), TargetId::PwLinear);
    }
}
