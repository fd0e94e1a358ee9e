//! Simulation and analysis toolkit for Rydberg-atom microwave near-field imaging.
//!
//! - [`physics`]: constants, near-field region bounds, splitting ↔ field conversion
//! - [`spectroscopy`]: Doppler-averaged EIT / Autler–Townes spectra of a retro-reflected ladder
//! - [`analysis`]: peak finding, baseline + Gaussian fitting, splitting extraction
//! - [`sources`]: synthetic scenes (horn, wire tips, tag, perturbing probe)
//! - [`scan`]: scan plans, virtual scans, map files and profiles
//! - [`metrics`]: SSIM, difference maps, SBR and box S/N

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod physics;
mod quadrature;
pub mod scan;
pub mod sources;
pub mod spectroscopy;

pub use error::{Error, Result};
