//! Simulation and analysis of a cascade-locked laser: a fast PDH lock of the
//! laser to a low-cost cavity and a slow saturated-absorption lock of that
//! cavity to an atomic line.

pub mod cascade;
pub mod config;
pub mod error;
pub mod lti;
pub mod noise;
pub mod pdh;
pub mod readout;
pub mod sas;
pub mod series;
pub mod spectral;

pub use error::{Error, Result};
pub use series::{TimeSeries, Unit};
