//! Layered interference alignment for MIMO X channels.
//!
//! The crate covers the signal chain (integer constellations, alignment
//! precoding, joint hard-decision decoding) and a set of brute-force
//! Diophantine approximation oracles that probe the minimum-distance laws
//! the scheme depends on. The [`harness`] module ties everything together
//! into seeded Monte Carlo experiments.

pub mod alignment;
pub mod constellation;
pub mod decoder;
pub mod diophantine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod seed;
pub mod xchannel;

pub use error::{Error, Result};

/// An integer transmit symbol. Real-mode symbols keep `im == 0`; complex
/// mode uses Gaussian integers.
pub type Symbol = num_complex::Complex<i64>;
