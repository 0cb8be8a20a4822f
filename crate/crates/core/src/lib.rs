//! Hierarchical fuzzy neural networks with privacy-preserving training.
//!
//! Low-level first-order Takagi–Sugeno branches each see one homogeneous
//! feature subset. Their antecedent parameters come from a consensus K-means
//! solved with ADMM across simulated agents that never exchange raw rows; the
//! consequent weights and the high-level coordination weights come from an
//! alternating sequence of closed-form ridge solves.
//!
//! The numerical layers are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common `f64` instantiation.

pub mod agent_sim;
pub mod ao;
pub mod clustering;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod fnn;
pub mod model;
mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FuzzySet = fnn::GaussianFuzzySet<f64>;
pub type RuleBank = fnn::RuleBank<f64>;
pub type DesignMatrix = fnn::DesignMatrix<f64>;
pub type HierarchyWeights = fnn::HierarchyWeights<f64>;
pub type AdmmState = clustering::AdmmState<f64>;
pub type Transcript = agent_sim::Transcript<f64>;
pub type RoundMessage = agent_sim::RoundMessage<f64>;
pub type NormalizationStats = data::NormalizationStats<f64>;
pub type Model = model::HfnnModel<f64>;

/// Single-precision model, for memory-bound inference.
pub type Model32 = model::HfnnModel<f32>;
