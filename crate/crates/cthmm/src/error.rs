//! Error type shared by every module in the crate.

use nalgebra::DMatrix;

/// Errors produced by model validation, estimation passes, and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model failed structural validation (dimensions, row sums, signs).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An observation record failed validation (ordering, range, length).
    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    /// The observation at the given time has probability zero under the
    /// current model, so no posterior exists.
    #[error("observation at t = {time} has zero probability under the model")]
    ImpossibleEvidence { time: f64 },

    /// Two grids that must share geometry (times, event scaling) differ.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A matrix that must be inverted is singular; carries the offending
    /// matrix and its numerical rank.
    #[error("singular {what} matrix (rank {rank} of {dim})")]
    SingularMatrix {
        what: String,
        rank: usize,
        dim: usize,
        matrix: DMatrix<f64>,
    },

    /// A state or weight became non-finite during integration or sampling.
    #[error("non-finite {what} at t = {time}")]
    NonFinite { what: String, time: f64 },

    /// An argument was outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// File or format error while reading or writing external data.
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
