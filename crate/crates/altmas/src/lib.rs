//! Active testing of black-box classifiers on a budget.
//!
//! Given an unlabeled evaluation pool, the frozen predictions of a
//! model-under-test and a labeling budget, this crate estimates user-chosen
//! performance metrics (accuracy, per-class precision/recall and their macro
//! averages) while choosing which points to send to the labeling oracle.
//! Points are picked by the expected information gain they carry *about the
//! requested metrics*, computed from a Monte-Carlo-dropout surrogate of the
//! label distribution. Random sampling and plain predictive-uncertainty
//! sampling are included as baselines.

pub mod acquisition;
pub mod datapool;
mod error;
pub mod estimation;
pub mod harness;
pub mod metrics;
pub mod surrogate;

pub use error::{Error, Result};
