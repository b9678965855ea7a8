//! Polarization-resolved spectroscopy of quantum-dot excitons.
//!
//! The crate covers the whole measurement chain: a forward model of a
//! rotating-waveplate polarimeter in front of a spectrometer ([`forward`],
//! [`mueller`]), Gaussian line fitting ([`peakfit`]), extraction of the
//! fine-structure splitting and dipole orientation ([`fss`]), ensemble
//! statistics ([`ensemble`]), the two-photon state emitted by the
//! biexciton cascade ([`entangle`]) and DBR cavity reflectance ([`cavity`]).

pub mod cavity;
pub mod domain;
pub mod ensemble;
pub mod entangle;
pub mod error;
pub mod forward;
pub mod fss;
pub mod io;
pub mod mueller;
pub mod peakfit;

pub use domain::{AngleSeries, AngleSpectrum, RngSeed, Spectrum, StokesVector};
pub use error::{Error, Result};
