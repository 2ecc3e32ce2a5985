//! Dual-scale permeability prediction for fibrous porous media.

pub mod error;
pub mod geometry;
pub mod neural;
pub mod parallel;
pub mod pipelines;
pub mod pinn_hybrid;
pub mod stokes;
pub mod surrogate;
pub mod tensor;
pub mod upscaling;

pub use error::{Error, Result};
