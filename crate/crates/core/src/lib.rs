// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amis;
pub mod asymptotics;
pub mod bounds;
pub mod densities;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod normal;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod soundness;
pub mod summation;

pub use error::{Error, Result};
