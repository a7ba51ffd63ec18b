//! Adversarial attacks against point-cloud completion models.
//!
//! The crate builds a full desk-scale attack pipeline: synthetic partial
//! clouds, a differentiable toy completion model, geometry- and
//! latent-space attacks under a density-adaptive perturbation constraint,
//! statistical defenses, and the evaluation-metric suite tying them all
//! together. See the `book/` guide for a narrative walkthrough.

pub mod data;
pub mod defense;
pub mod error;
pub mod geometry;
pub mod attack;
pub mod autodiff;
pub mod campaign;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};
