use thiserror::Error;

/// Errors raised by the workbench.
///
/// The CLI maps these onto exit codes: configuration problems exit with 2,
/// numerical non-convergence with 3, everything else that signals a failed
/// verification with 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or incomplete setup (missing evaluators, empty ensembles, bad config).
    #[error("configuration error: {0}")]
    Config(String),
    /// An object failed one of its construction-time invariants.
    #[error("construction error: {0}")]
    Construction(String),
    /// A fit did not have enough usable rows.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// The dyadic reconstruction sequence did not settle although γ̂ > 0.
    #[error("no convergence after n = {n_max}: last increment {last_increment:e}")]
    NonConvergence { n_max: u32, last_increment: f64 },
    /// A verification check failed (e.g. gluing with γ̂ > 0).
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
