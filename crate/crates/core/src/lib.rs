//! Demonstration curation with rollout-trained success classifiers.
//!
//! The pipeline trains a mixture-density behaviour-cloning policy on
//! heterogeneous scripted demonstrations, collects rollouts at several
//! training checkpoints, fits small success classifiers on those rollouts,
//! picks one by cross-validation on a held-out checkpoint, filters the
//! demonstrations whose mean predicted success falls at or below a learned
//! threshold, and retrains.

pub mod curator;
pub mod baselines;
pub mod datamodel;
pub mod envsim;
pub mod error;
pub mod numcore;
pub mod pipeline;
pub mod policy;

pub use error::{Error, Result};

/// Dense matrix of the pipeline's scalar type.
pub type Mat = numcore::Matrix<f64>;
/// Network parameters of the pipeline's scalar type.
pub type MlpParams = numcore::Mlp<f64>;
pub type MlpGradients = numcore::Gradients<f64>;
pub type AdamWState = numcore::AdamW<f64>;
