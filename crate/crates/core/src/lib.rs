//! Feature-attribution disagreement analysis.
//!
//! The crate trains a small rectifier classifier while keeping a snapshot of
//! its parameters at every epoch, explains each test prediction with nine
//! local attribution methods, measures how much those explanations agree on
//! their top-k features, and correlates the agreement level with the model's
//! AUC across the training trajectory.
//!
//! Module map:
//!
//! - [`dataset`]: CSV ingestion, preprocessing recipes, splits, standardization
//! - [`model`]: the multilayer perceptron, its gradients and the training loop
//! - [`attribution`]: the nine attribution methods
//! - [`agreement`]: top-k selection and the FA / SA / RA / SRA metrics
//! - [`evaluation`]: AUC and Spearman correlation
//! - [`experiment`]: the end-to-end pipeline and its file outputs

pub mod agreement;
pub mod attribution;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
mod numfmt;
pub mod rng;

pub use error::{Error, Result};
pub use numfmt::{format_f64, parse_f64};
