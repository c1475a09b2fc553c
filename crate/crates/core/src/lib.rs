//! Delta-convex fitting: nonparametric Lipschitz regression with
//! max-affine-in-features estimators, plus approximation oracles and
//! nearest-neighbour and kernel baselines.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod features;
pub mod fit;
pub mod model;
pub mod partition;
pub mod solver;

pub use error::{DcfError, Result};
