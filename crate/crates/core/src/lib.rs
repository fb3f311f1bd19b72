//! Discrete-time simulator and security analysis for the
//! Kirchhoff-law-Johnson-noise (KLJN) key exchange.
//!
//! * [`noise`]: Johnson-noise generation and seeded stream derivation.
//! * [`circuit`]: the Kirchhoff loop, ideal and with a lumped RC wire.
//! * [`protocol`]: resistor selection, public comparison, filtering and key assembly.
//! * [`attacks`]: eavesdropper distinguishers, power-flow estimation and blinding.
//! * [`security`]: success-probability estimation, sensitivity slopes,
//!   total variation distance and XOR privacy amplification.
//! * [`config`] and [`experiment`]: the `kljn-sim` command-line harness.

pub mod attacks;
pub mod circuit;
pub mod config;
pub mod error;
pub mod experiment;
pub mod noise;
pub mod protocol;
pub mod security;

pub use error::{Error, Result};
