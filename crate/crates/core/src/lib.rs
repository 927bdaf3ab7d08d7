//! Matching, subclassification and weighting designs for observational studies
//! with three or more nominal treatments.
//!
//! The pipeline mirrors how an analysis is run:
//!
//! 1. [`gps`] fits a multinomial logistic assignment model and produces the
//!    generalized propensity score vector for every unit.
//! 2. [`support`] computes the rectangular common-support region, drops units
//!    outside of it and re-fits the model once.
//! 3. [`designs`] builds matched sets (vector matching, common referent
//!    matching, pairwise comparisons), k-means subclasses or inverse
//!    probability weights.
//! 4. [`balance`] and [`inference`] summarize covariate balance and contrast
//!    outcomes across the resulting cohorts.
//!
//! [`sim`] holds the data-generating processes and the factorial sweep used to
//! study covariate balance across designs.

pub mod balance;
pub mod cluster;
pub mod data;
pub mod designs;
mod error;
pub mod gps;
pub mod inference;
pub mod matcher;
pub mod rng;
pub mod sim;
pub mod support;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
