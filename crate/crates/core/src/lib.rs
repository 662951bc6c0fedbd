//! Photon-pair statistics, quantum non-Gaussianity criteria and the
//! time-tag analysis pipeline for cascaded quantum-dot and SPDC sources.

pub mod config;
pub mod criteria;
pub mod error;
pub mod estimators;
pub mod photon_number;
pub mod polarization;
pub mod simulator;
pub mod timetag;

pub use error::{Error, ErrorKind, Result};
