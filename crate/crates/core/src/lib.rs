//! Interpolation of spatio-temporal fields from irregular station time series.
//!
//! The centered station data are decomposed into orthonormal temporal bases
//! and spatial coefficients ([`eof`]). A multi-output feedforward network
//! ([`model`]) maps spatial covariates to the coefficients and recomposes the
//! full time series through a frozen layer holding the temporal bases, so the
//! training loss is measured on the field itself. [`simulate`] generates the
//! synthetic benchmark and [`variogram`] provides the diagnostics.

pub mod csvio;
pub mod dataset;
pub mod eof;
pub mod error;
pub mod grid;
mod linalg;
pub mod seeds;
pub mod model;
pub mod simulate;
pub mod variogram;

pub use error::{Error, Result};
