//! Semiclassical Schrödinger propagation, phase-space diagnostics and
//! eigenvalue-crossing experiments.

pub mod crossing;
pub mod eigen;
pub mod error;
pub mod fft;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod packets;
pub mod potential;
pub mod propagate;
pub mod rays;
pub mod scattering;
pub mod scenarios;
pub mod spectral;
pub mod twoscale;
pub mod wigner;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;
