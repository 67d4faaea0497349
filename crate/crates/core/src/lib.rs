//! Spatio-temporal 3D convolutional networks with class-regularization
//! blocks: intermediate activations are excited channel-wise by a rescaled
//! row of the classifier's own weight matrix, selected by an early class
//! estimate at that depth.
//!
//! Everything runs in `f64` on the CPU with hand-written forward and backward
//! passes. With the `parallel` feature (default) batch-level loops use rayon;
//! results are bit-identical to the sequential build.

pub mod classreg;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod par;
pub mod persistence;
pub mod profiling;
pub mod rng;
pub mod saliency;
pub mod synth;
pub mod tensor;
pub mod training;

pub use classreg::{ClassRegBlock, ClassifierSnapshot, NormMode};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use network::{ClassRegSpec, LayerSpec, Network, NetworkSpec};
pub use tensor::Tensor;
