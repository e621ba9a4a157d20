//! Video mesh recovery with a diffusion-inspired transformer decoder, on a
//! synthetic articulated body.

pub mod body;
pub mod ddt;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;

pub use error::CoreError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
