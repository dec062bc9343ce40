//! Spectral-aware block importance estimation for block-sparse attention.
//!
//! Mean pooling a block of RoPE-rotated vectors acts as a low-pass filter:
//! fast-rotating frequency pairs cancel and slow pairs survive. This crate
//! models that attenuation analytically ([`spectral`]), estimates block
//! masks with separate high- and low-frequency branches whose temperatures
//! are derived from pooled energy ([`estimator`]), and judges the masks
//! against dense attention ([`attention`]) on seeded synthetic workloads
//! ([`synth`]).

pub mod attention;
pub mod error;
pub mod estimator;
pub mod numerics;
pub mod rope;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use numerics::{BoolMatrix, Matrix, Real};
