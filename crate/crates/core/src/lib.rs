//! Fairness-penalized binary risk models.
//!
//! The crate trains small feedforward classifiers whose objective adds a
//! penalty on group-conditional differences in predicted log-risk, and scores
//! the resulting models with group-level parity, calibration and cross-group
//! ranking metrics.
//!
//! Module map:
//! - [`cohort`]: labeled, group-annotated records, file format, splits and synthetic data.
//! - [`features`]: interval-based binary features from longitudinal event timelines.
//! - [`model`]: feedforward network, exact gradients, Adam, early stopping.
//! - [`penalty`]: MMD and mean-difference fairness regularizers.
//! - [`metrics`]: ranking, parity, calibration and xAUC metrics plus [`metrics::FairnessReport`].
//! - [`experiment`]: lambda sweeps, fold aggregation and report emission.

pub mod cohort;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod model;
pub mod penalty;

mod lbfgs;
mod util;

pub use error::{Error, Result};

/// Library version recorded in run manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
