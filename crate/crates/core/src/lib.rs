//! Noisy Trotterized imaginary time evolution of the transverse-field Ising chain.

pub mod error;
pub mod analysis;
pub mod cli;
pub mod dmrg;
pub mod doubled;
pub mod exact;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod parallel;

pub use error::{Error, Result};
