//! Causal explanations for convolutional classifiers.
//!
//! Concept variables are extracted from a trained classifier with
//! autoencoders attached at several activation levels. Zeroing individual
//! code channels yields interventional data, from which a layered discrete
//! Bayes net is fitted and queried for causal effects on the prediction.

pub mod autoencoder;
pub mod bn;
pub mod concepts;
pub mod error;
pub mod explain;
pub mod intervention;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod target;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
