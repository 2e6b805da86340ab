use thiserror::Error;

use crate::lattice::LatticePoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid process spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("no occupied site within search radius {radius} of {center:?}")]
    NoOccupiedSite { center: LatticePoint, radius: i64 },
    #[error("layer has no B-particles at t = {0}")]
    NoBParticles(f64),
    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),
    #[error("all {0} replicas breached containment")]
    AllReplicasFlagged(usize),
    #[error("shape has empty interior: lambda[{index}] = {value}")]
    EmptyInterior { index: usize, value: f64 },
    #[error("directions do not positively span the space; intersection is unbounded")]
    Unbounded,
    #[error("operation supports d <= 2 only (got d = {0})")]
    DimensionUnsupported(usize),
    #[error("insufficient replicas: need at least {needed}, got {got}")]
    InsufficientReplicas { needed: usize, got: usize },
    #[error("coupled layers must share one path ensemble")]
    CouplingNotApplicable,
    #[error("unknown particle {0}")]
    UnknownParticle(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
