//! Small fully-connected networks trained from small initialization, with
//! tools to measure and predict how hidden-neuron input weights condense
//! onto a few orientations during the initial stage of training.

pub mod activations;
pub mod condensation;
pub mod config;
pub mod data_io;
pub mod error;
pub mod matrix;
pub mod network;
pub mod poly;
pub mod theory;
pub mod training;
pub mod verify;

pub use activations::{Activation, ActivationKind};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use network::{Batch, NetworkConfig, NetworkParams};
