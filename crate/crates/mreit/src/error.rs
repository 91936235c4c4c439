use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid electrode placement: {0}")]
    InvalidElectrodes(String),

    #[error("field/grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid field data: {0}")]
    InvalidField(String),

    #[error("invalid blur parameters: {0}")]
    InvalidBlur(String),

    #[error("singular or ill-posed linear system: {0}")]
    SingularSystem(String),

    #[error("linear solver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("series too short for rate fit: {0} pre-plateau points (need at least 5)")]
    SeriesTooShort(usize),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
