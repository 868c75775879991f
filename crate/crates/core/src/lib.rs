//! Federated-learning simulator with a heat-map based defense against
//! Euclidean-constrained model poisoning.
//!
//! Benign clients train a small CNN on their shard of a synthetic image set,
//! attackers submit crafted updates that stay inside a ball around the
//! benign consensus, and the server renders a LayerCAM heat map of every
//! upload on one fixed probe image. An autoencoder trained on the round's
//! heat maps scores each upload by reconstruction error; uploads above a
//! mean-plus-α·std threshold are dropped for the round, and a vote over a
//! block of ξ rounds decides who is excluded at block boundaries.
//!
//! Classical distance-based defenses (Multi-Krum, trimmed mean, an
//! AUROR-style 2-means filter) are included for comparison.

pub mod attack;
pub mod autoencoder;
pub mod baselines;
pub mod cam;
pub mod config;
pub mod data;
pub mod defense;
mod error;
pub mod fl;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod seeding;
mod tensor;
pub mod voting;

pub use error::{Error, FieldIssue, Result};
pub use nn::{ClassifierArch, ClassifierNet, GradientTape, LayerSpec, ModelParams};
pub use tensor::Tensor;
