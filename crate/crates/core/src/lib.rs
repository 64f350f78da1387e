//! RIS-aided mmWave fingerprint positioning.
//!
//! The crate covers the full pipeline: geometric multipath synthesis,
//! cascaded RIS channels and the space-time channel response vector used as
//! a fingerprint, dataset assembly and storage, a small tensor engine with
//! analytic gradients, the residual convolutional regression network, and
//! its training loop.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
