//! Block-weighted PRNU fingerprinting from compressed video.
//!
//! Per-block codec metadata (skip status, QP, coded bits) arrives through a
//! trace sidecar, weights each block's contribution to the fingerprint
//! estimate, and fingerprints are compared by peak-to-correlation energy.

pub mod bitstream;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod matching;
pub mod noise;
pub mod par;
pub mod plane;
pub mod prnu;
pub mod simulator;
pub mod trace;
pub mod weighting;

pub use error::{Error, ErrorClass, Result};
pub use plane::Plane;
