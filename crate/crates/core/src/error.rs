use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("times and marks have different lengths ({times} vs {marks})")]
    LengthMismatch { times: usize, marks: usize },

    #[error("observation window [{start}, {end}) is empty or not finite")]
    InvalidWindow { start: f64, end: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),

    #[error("two events share the exact time {time}")]
    DuplicateTime { time: f64 },

    #[error("mark {mark} is outside 0..{d}")]
    MarkOutOfRange { mark: usize, d: usize },

    #[error("event time {time} lies outside the window [{start}, {end})")]
    TimeOutsideWindow { time: f64, start: f64, end: f64 },

    #[error("link function evaluated outside its domain at x = {x}")]
    DomainError { x: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("invalid spline basis: {0}")]
    InvalidBasisSpec(String),

    #[error("quadrature spacing {delta} is coarser than support/4 = {limit}")]
    GridTooCoarse { delta: f64, limit: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("information matrix is singular even after jitter escalation")]
    SingularInformation,

    #[error("covariance block of `{0}` is identically zero")]
    DegenerateCovariance(String),

    #[error("unknown structure `{0}`; expected one of L1, L2, L3, P1, P2, P3")]
    UnknownStructure(String),

    #[error("the observed mark set is empty")]
    EmptyObservedSet,

    #[error("simulation exceeded the cap of {max_events} events")]
    ExplosionGuard { max_events: usize },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no design block named `{0}`")]
    MissingBlock(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
