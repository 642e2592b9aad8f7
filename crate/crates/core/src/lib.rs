//! Gaussian-process analysis of oversmoothing in deep graph convolutional
//! networks: covariance propagation, linear stability of the zero-distance
//! state, GP regression on nodes and a finite-width reference network.

pub mod complete;
pub mod dynamics;
pub mod error;
pub mod finite;
pub mod graph;
pub mod inference;
pub mod kernel;
pub mod linear;
pub mod spectrum;

pub use error::{Error, Result};
