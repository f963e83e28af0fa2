use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No exit happened before the simulation cap. The region may be absorbing
    /// or the cap too small.
    #[error("no exit from region before the cap of {cap} time units")]
    CapExceeded { cap: f64 },

    #[error("jump rate {rate} exceeds the thinning bound {bound}")]
    BoundViolated { rate: f64, bound: f64 },

    #[error("dephasing failed: replica {replica} exceeded {max_restarts} restarts")]
    DephasingFailed { replica: usize, max_restarts: u64 },

    #[error("all {copies} Fleming-Viot copies escaped in round {round}")]
    AllCopiesEscaped { copies: usize, round: u64 },

    #[error("fragment source exhausted after {consumed} fragments without an escape")]
    SourceExhausted { consumed: usize },

    #[error("wall-clock times of replica {replica} decrease at segment {segment}")]
    MonotonicityViolation { replica: usize, segment: usize },

    #[error("fragment ({replica}, {segment}) requested out of order, next available segment is {expected}")]
    OrderViolation {
        replica: usize,
        segment: u64,
        expected: u64,
    },

    #[error("direction vectors must sum to zero, got {sum:?}")]
    InvalidDirections { sum: [f64; 2] },

    #[error("quadrature did not converge: n = {n} gives {coarse}, 2n gives {fine}")]
    QuadratureNotConverged { n: usize, coarse: f64, fine: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
