//! Blackberry ripeness classification from paired 700 nm / 770 nm images:
//! wavelength selection from hyperspectral cubes, sample preparation, a
//! two-branch dense classifier, a stacked ensemble, evaluation and tuning.

pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod evalx;
pub mod error;
pub mod model;
pub mod nnkernel;
pub mod spectral;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
