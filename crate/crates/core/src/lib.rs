//! Iterative lattice-reduction-aided K-best soft MIMO decoder.
//!
//! The library models the full receive chain for a spatially multiplexed
//! MIMO link: real-valued decomposition of the complex system, MMSE
//! extension, LLL lattice reduction, CORDIC/Givens QR, breadth-first K-best
//! search with on-demand child expansion, max-log extrinsic LLRs, and a
//! layered min-sum LDPC decoder closing the outer loop. Every arithmetic
//! kernel on the data path can run either in native `f64` or through a
//! parametric fixed-point emulation (`fixedpoint`), so word-length effects
//! can be measured against the floating-point reference on shared seeds.
//!
//! The `sim` module ties the pieces into deterministic Monte-Carlo BER
//! sweeps; the `lrkbest` binary exposes them on the command line.

pub mod channel;
pub mod fixedpoint;
pub mod kbest;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod softdec;

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or length mismatch between related inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Matrix rank too low for the requested decomposition.
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    /// Iteration bound exhausted without reaching the exit condition.
    #[error("non-termination: {0}")]
    NonTermination(String),
    /// Configuration file or parameter rejected.
    #[error("config error: {0}")]
    Config(String),
    /// I/O failure while reading fixtures or writing results.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
