use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Fock space of {particles} bosons on {sites} sites overflows the index range")]
    BasisOverflow { particles: usize, sites: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("site {site} out of range 1..={sites}")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("eigensolver failed to converge")]
    EigenNoConvergence,

    #[error("eigenpair {index} failed the residual check (residual {residual:e})")]
    EigenResidual { index: usize, residual: f64 },

    #[error("channel {index} is closed or not part of this block")]
    ClosedChannel { index: usize },

    #[error("no open channels at energy {energy}")]
    NoOpenChannels { energy: f64 },

    #[error("singular scattering system at energy {energy}")]
    SingularSystem { energy: f64 },

    #[error("window {window} does not fit into extent {extent}")]
    WindowTooLarge { window: usize, extent: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate samples: {0}")]
    Degenerate(String),

    #[error("fit window is empty: {0}")]
    EmptyFitWindow(String),

    #[error("target energy {target} outside classical range [{min}, {max}]")]
    UnreachableEnergy { target: f64, min: f64, max: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
