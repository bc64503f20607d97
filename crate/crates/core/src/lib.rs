//! Curriculum-learning training and privacy auditing for small dense classifiers.
//!
//! The crate trains fully-connected networks normally or under a curriculum
//! (bootstrap, transfer, baseline and anti-curriculum orders with exponential
//! pacing), then measures leakage with membership-inference attacks (shadow-model
//! NN attack, metric attacks, a noise-robustness label-only attack, calibrated and
//! difficulty-calibrated attacks), attribute inference on embeddings,
//! memorization and KNN-Shapley analysis, and defenses (DP-SGD, noisy-curriculum
//! DP-SGD, posterior perturbation).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod aia;
pub mod analysis;
pub mod curriculum;
pub mod data;
pub mod defense;
pub mod mia;
pub mod error;
pub mod harness;
pub mod nn;
pub mod report;
pub mod scalar;

pub use error::{Error, Result, Stage};
pub use scalar::Scalar;

pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
