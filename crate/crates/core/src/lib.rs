//! Adaptive two-sample homogeneity tests for high-dimensional linear
//! regression.
//!
//! Given two samples `(X1, Y1)` and `(X2, Y2)` over the same `p`
//! covariates, the library tests whether both follow the same Gaussian
//! linear model. A data-driven collection of small supports is read off a
//! Lasso path, each support is tested with three low-dimensional statistics,
//! and the resulting p-values are combined through Bonferroni or permutation
//! calibrated thresholds. The same machinery compares two Gaussian graphical
//! models node by node.

pub mod calibrate;
pub mod collections;
pub mod data;
pub mod engine;
pub mod error;
pub mod ggm;
pub mod numkit;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod validate;

pub use data::{SubsetModel, TwoSampleData};
pub use error::{Error, Result};
