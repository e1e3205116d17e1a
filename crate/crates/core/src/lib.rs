//! Semi-nonparametric estimation of multidimensional matching models.
//!
//! Exact discrete optimal transport with dual wage recovery, tensor
//! Bernstein sieves, the SML / SLS / SGLS sieve estimators, simulation
//! designs and distribution diagnostics.

pub mod cli;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod io;
pub mod optim;
pub mod ot;
pub mod qp;
pub mod sample;
pub mod sieve;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
pub use sample::MatchedSample;
