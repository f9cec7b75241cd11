//! Sparse Fourier transform for continuous-frequency signals in `d` dimensions.

pub mod error;
pub mod filters;
pub mod hash2bins;
pub mod hashing;
pub mod locate;
pub mod metrics;
pub mod numerics;
pub mod rangetree;
pub mod recover;
pub mod signal;

pub use error::{Error, Result};
pub use numerics::C64;
