//! Reference-free perceptual-loss training for mask-based noise suppression.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dns;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod quality;
pub mod spectral;
pub mod trainer;
pub mod wav;

pub use error::{Error, Result};
