//! Task adaptive activation networks.
//!
//! A multi-task feed-forward network whose hidden weights are fully shared
//! across tasks. Each task owns only the coordinates of its adaptive
//! piecewise-linear activation at every hidden layer (plus an output head),
//! so the distance between two tasks' activations, measured in a
//! Gaussian-weighted function space, reflects how much the tasks share.

pub mod analysis;
pub mod apl;
pub mod benchmark;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod moments;
pub mod network;
pub mod regularizers;
pub mod training;

pub use error::{Result, TaanError};
pub use matrix::Matrix;
