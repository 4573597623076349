//! Image segmentation as QUBO minimization.
//!
//! A Potts MRF over pixel labels is compiled into a quadratic binary
//! problem (binary or one-hot encoding), sampled by simulated annealing,
//! and wrapped in an EM loop that re-estimates per-class noise parameters.

pub mod anneal;
pub mod em;
pub mod error;
pub mod imaging;
pub mod mrf;
pub mod noise;
pub mod qubo;
pub mod rng;

pub use error::{Error, Result};
