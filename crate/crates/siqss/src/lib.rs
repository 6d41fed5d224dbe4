//! Simulation and finite-key analysis for entanglement-based quantum secret
//! sharing with postmatched GHZ rounds.
//!
//! The crate models the full chain: entangled-pair sources, lossy stochastic
//! detection with dark counts, coincidence matching, the classical postmatching
//! construction that turns pairwise Bell correlations into virtual n-party GHZ
//! rounds, parameter estimation, and the finite-key length arithmetic.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Real`]);
//! the type aliases at the crate root fix `f64`, which is what the `siqss`
//! binary uses.

pub mod config;
pub mod detection;
pub mod estimation;
pub mod keyrate;
pub mod postmatch;
pub mod qmath;
pub mod runner;
pub mod scalar;
pub mod source;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid quantum state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("qubit index {index} out of range for {qubits} qubits")]
    QubitIndex { index: usize, qubits: usize },
    #[error("event list is not sorted by timestamp")]
    UnsortedEvents,
    #[error("no rounds in basis {0}")]
    EmptyBasis(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("duplicate dataset: session logs must come from distinct sessions")]
    DuplicateDataset,
    #[error("expected {expected} session streams for {players} players, got {got}")]
    MissingPlayer {
        expected: usize,
        players: usize,
        got: usize,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub type StateVector64 = qmath::StateVector<f64>;
pub type DensityMatrix64 = qmath::DensityMatrix<f64>;
pub type SourceParams64 = source::SourceParams<f64>;
pub type ChannelParams64 = detection::ChannelParams<f64>;
pub type SecurityParams64 = keyrate::SecurityParams<f64>;
pub type EstimationResult64 = estimation::EstimationResult<f64>;
pub type KeyReport64 = keyrate::KeyReport<f64>;
