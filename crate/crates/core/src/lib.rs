//! Frequency-adaptive image classification: learnable soft DCT band
//! partitioning, a shared micro-ViT over the band images, a parallel
//! micro-ResNet, softmax fusion and a variational Bayesian linear head,
//! trained end to end on a small reverse-mode autodiff engine.

pub mod backbones;
pub mod bayes;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dct;
pub mod error;
pub mod freq;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
