use thiserror::Error;

/// Errors produced by the library. The CLI maps them onto exit codes with
/// [`Error::is_input_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no edges")]
    EmptyGraph,

    #[error("weighting parameter g must lie in (0, 1), got {0}")]
    InvalidG(f64),

    #[error("edge probability {name} = {value} lies outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("self-loop on node {node}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    SelfLoop { node: usize, line: Option<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance is not positive semidefinite (correlation argument {0})")]
    NonPsdInput(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no convergence within {layers} layers (last residual {residual:e})")]
    NotConverged { layers: usize, residual: f64 },

    #[error("state is not a fixed point of the covariance map (residual {0:e})")]
    NotAFixedPoint(f64),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("bracket [{lo}, {hi}] does not straddle the transition")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("eigenvector basis is ill-conditioned (condition number {0:e})")]
    DefectiveSpectrum(f64),

    #[error("linear system is singular (condition number {0:e})")]
    SingularSystem(f64),

    #[error("no root in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("full spectrum is not computed for pair-space dimension {0}")]
    SpectrumUnavailable(usize),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyGraph
                | Error::InvalidG(_)
                | Error::InvalidProbability { .. }
                | Error::Parse { .. }
                | Error::SelfLoop { .. }
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidBracket { .. }
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
