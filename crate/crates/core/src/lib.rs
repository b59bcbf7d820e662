//! Balanced signed graph learning and spectral low-pass denoising for
//! multichannel time series, with two-denoiser reconstruction-error
//! classification.

pub mod balance;
pub mod cli;
pub mod classify;
pub mod data;
pub mod error;
pub mod graph;
pub mod spectral;
pub mod train;
pub mod unrolled;

pub use error::{Error, Result};
