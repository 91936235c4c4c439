//! Desk-scale 2D MREIT toolkit.
//!
//! Pipeline: a conductivity phantom and one injected current produce the
//! magnetic flux density component Bz (forward problem); the internal current
//! density is recovered from Bz alone via two auxiliary potentials; the
//! conductivity is then reconstructed by the single-current harmonic Bz
//! iteration with a known background conductivity on an outer band.

pub mod error;
pub mod experiment;
pub mod fields;
pub mod forward;
pub mod geometry;
pub mod metrics;
pub mod pde;
pub mod phantom;
pub mod reconstruct;
pub mod recovery;

pub use error::{Error, Result};

/// Magnetic permeability of free space, H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;
