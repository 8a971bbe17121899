//! Core numerics for reconstructing quantitative susceptibility maps (QSM)
//! from high-pass filtered phase (HPFP) volumes.
//!
//! The crate provides voxel-grid geometry and 3D volumes, discrete Fourier
//! transforms and k-space resampling, the dipole-convolution and Hann
//! high-pass-filter forward operators with their fidelity loss and analytic
//! gradient, synthetic phantom generation, and volumetric image quality
//! metrics.
//!
//! All numeric types are generic over the scalar via [`Scalar`] (`f32` or
//! `f64`); the aliases at the crate root pin the default 64-bit pipeline.

pub mod fft;
pub mod grid;
pub mod metrics;
pub mod phantom;
pub mod physics;
pub mod qvol;
pub mod scalar;
pub mod volume;

mod error;

pub use error::{CoreError, Result};
pub use grid::VoxelGrid;
pub use scalar::{sc, wrap_phase, Scalar};
pub use volume::{ComplexVolume, RealVolume};

/// Default scalar for the 64-bit pipeline.
pub type Real = f64;

/// Real volume with the default scalar.
pub type RealVolume64 = volume::RealVolume<f64>;
/// Complex volume with the default scalar.
pub type ComplexVolume64 = volume::ComplexVolume<f64>;
/// Single-precision real volume.
pub type RealVolume32 = volume::RealVolume<f32>;
/// Single-precision complex volume.
pub type ComplexVolume32 = volume::ComplexVolume<f32>;
