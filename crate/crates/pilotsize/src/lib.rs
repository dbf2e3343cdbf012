//! Training-set size estimation for lasso logistic classifiers.
//!
//! Given a pilot data set (real or simulated), the pipeline estimates how
//! large a training set must be for the classifier's logistic slope to come
//! within a requested tolerance of its asymptotic value. The finite-sample
//! slope is measured by repeated, centered, scaled nested cross-validation;
//! the prediction-error variance by a centered-scaled leave-one-out nested
//! case-cross-validated bootstrap; and the asymptotic slope by an
//! errors-in-variables regression (conditional score, with quadratic SIMEX
//! as a stability fallback). A Box-Cox regression of subset size on
//! tolerance yields the target sample size, and a learning-curve baseline is
//! provided for comparison.
//!
//! Start from [`pipeline::run`] for the whole flow, or use the modules
//! directly:
//!
//! - [`data`]: datasets, validation, folds, subsampling, score batches
//! - [`sim`]: synthetic population designs
//! - [`lasso`]: penalized logistic regression with cross-validated tuning
//! - [`resample`]: slope and variance resampling engines
//! - [`eiv`]: conditional-score and SIMEX asymptotic slope estimators
//! - [`sizing`]: tolerance curve, Box-Cox sizing, adequacy checks, accuracy
//! - [`lc`]: learning-curve baseline
//! - [`ingest`], [`config`], [`report`], [`pipeline`]: file formats and
//!   orchestration for the command-line tool

pub mod config;
pub mod data;
pub mod eiv;
pub mod error;
pub mod ingest;
pub mod lasso;
pub mod lc;
mod linalg;
mod logistic;
pub mod pipeline;
pub mod report;
pub mod resample;
pub mod seeds;
pub mod sim;
pub mod sizing;

pub use error::{Error, Result};
