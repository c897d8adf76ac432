// Negated comparisons are the NaN-rejecting form of range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod constraint;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod fixture;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod quantile;
pub mod rng;
pub mod trainer;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
