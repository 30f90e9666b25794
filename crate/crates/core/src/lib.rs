//! Deep-image-prior denoising of beam phase-space scans.

pub mod autodiff;
pub mod cli;
pub mod clustering;
pub mod dipnet;
pub mod emittance;
pub mod error;
pub mod image_io;
pub mod losses_metrics;
pub mod rng;
pub mod stopping;
pub mod synth;

pub use error::{Error, Result};
