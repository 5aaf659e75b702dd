//! Simulation and analysis of two-channel ratiometric fluorescence sensing
//! for PpIX-guided tumour detection.
//!
//! The crate follows the signal from tissue to statistics: emission spectra
//! ([`spectral`]), filters and the contact window ([`optics`]), the filtered
//! photodiode channels and a reference spectrometer ([`detector`]), a digital
//! tissue phantom ([`phantom`]), raster and line scans ([`scanner`]) and the
//! diagnostic ratios and scoring ([`analysis`]). [`pipeline`] strings the
//! stages together under one [`config::ExperimentConfig`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detector;
pub mod error;
pub mod optics;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod scanner;
pub mod spectral;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
