//! Differentially private text rewriting.
//!
//! A sequence autoencoder is trained to reconstruct its input while an
//! embedding reward spreads probability over semantically close tokens. At
//! generation time every position is resampled through the two-set
//! exponential mechanism, giving `(eps + ln s)` privacy per token and
//! `(eps + ln s) * l` per record.

pub mod anonymizer;
pub mod corpus;
pub mod dp;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod synthetic;

pub use error::{Error, Result};
