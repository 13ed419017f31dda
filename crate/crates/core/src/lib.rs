//! Data-parallel digital predistortion toolkit.
//!
//! Trains an augmented parallel Hammerstein (APH) predistorter against a
//! simulated transmitter (I/Q modulator impairments followed by a polynomial
//! power amplifier) using indirect learning, applies it to sample streams on
//! any number of worker threads, and measures spur suppression and
//! throughput.
//!
//! Module map:
//! - [`signal`]: test waveforms (random-QAM multitones, carrier aggregation)
//! - [`basis`]: branch polynomials and the regression matrix
//! - [`aph`]: serial and chunked parallel predistortion
//! - [`impairments`]: modulator and PA models
//! - [`training`]: gain estimation, least squares, the ILA loop
//! - [`analysis`]: Welch PSD, band power, suppression, NMSE
//! - [`bench`]: throughput harness
//! - [`config`]: the JSON experiment document

pub mod analysis;
pub mod aph;
pub mod basis;
pub mod bench;
pub mod config;
pub mod error;
pub mod impairments;
pub mod iq;
mod linalg;
pub mod signal;
pub mod training;

pub use error::{DpdError, Result};
pub use iq::IqBuffer;
