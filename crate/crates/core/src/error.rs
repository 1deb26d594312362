use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("attack infeasible: {0}")]
    Infeasible(String),
    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("induced chain is not unichain on the reachable set ({classes} recurrent classes)")]
    NotUnichain { classes: usize },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("policy iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("incompatible policy: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
