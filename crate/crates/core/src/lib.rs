//! Hyperspectral unmixing by nonnegative matrix factorization with an
//! adaptively fused multi-order graph regularizer, ℓ1/2 abundance sparsity,
//! and row-sparse (ℓ2,1) noise.
//!
//! The pipeline is: load or simulate a cube ([`hsi_core`], [`simgen`]), build
//! spatial and spectral k-NN graphs and their powers ([`graph`]), fuse them
//! into one consensus graph ([`fusion`]), factorize ([`unmix`]), and score the
//! result ([`metrics`]).

pub mod cli;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod hsi_core;
pub mod metrics;
pub mod rng;
pub mod simgen;
pub mod unmix;

pub use error::{Error, Result};
pub use hsi_core::HsiCube;
