//! Forward-filtering backward-sampling for linear Gaussian state-space models,
//! with a scalable variant built on hierarchical sparse Cholesky factors.

pub mod config;
pub mod error;
pub mod eval;
pub mod exact;
pub mod experiment;
pub mod hv;
pub mod models;
pub mod ops;
pub mod ordering;
pub mod output;
pub mod parallel;
pub mod rng;
pub mod sparse;
pub mod ssm;

pub use error::{Error, Result};
