//! Measuring how hard a sequence task is: LSTM cross-entropy per output
//! symbol, next to exact entropies and smoothed n-gram baselines.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod engine;
pub mod entropy;
pub mod error;
pub mod heads;
pub mod lstm;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vector64 = numerics::Vector<f64>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type Model64 = model::Model<f64>;
pub type Vector32 = numerics::Vector<f32>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Model32 = model::Model<f32>;
