use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0} is not strictly inside the unit disk")]
    OutsideDisk(Complex64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("wall arcs intersect for x = {0} (need |x| > sqrt(2) - 1)")]
    IntersectingWalls(f64),

    #[error("folding did not reach the fundamental domain within {0} steps")]
    FoldCapExceeded(usize),

    #[error("state lies outside the surface")]
    OutsideSurface,

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fiber data must be sampled on the full circle")]
    NotFullCircle,

    #[error("gamma function pole at {0}")]
    Pole(Complex64),

    #[error("escape fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("geometry hash mismatch: expected {expected}, found {found}")]
    GeometryMismatch { expected: String, found: String },

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn parse_err(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Parse {
        what,
        reason: reason.into(),
    }
}
