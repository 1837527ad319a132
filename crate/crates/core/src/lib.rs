//! AdaIN-switchable cycleGAN denoising in the wavelet-residual domain.

pub mod app;
pub mod config;
pub mod dataio;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
