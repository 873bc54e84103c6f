use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A Gram-type matrix lost rank; `users` names the user indices that span
    /// the (near) null direction.
    #[error("rank deficiency among users {users:?}: {detail}")]
    RankDeficient { users: Vec<usize>, detail: String },

    #[error("ill-conditioned matrix (condition number {condition:.3e}): {what}")]
    IllConditioned { what: String, condition: f64 },

    /// The retraction vector vanished; the caller should shrink the step.
    #[error("step too large: retraction vector vanished")]
    StepTooLarge,

    #[error("objective evaluation failed at iteration {iteration}: {source}")]
    Objective {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
