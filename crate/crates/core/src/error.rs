use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate profile: radius {value} <= 0 at interior node {index}")]
    DegenerateProfile { index: usize, value: f64 },
    #[error("invalid time t = {0}; expected t < 0")]
    InvalidTime(f64),
    #[error("time {tau} outside stored window [{lo}, {hi}]")]
    OutOfWindow { tau: f64, lo: f64, hi: f64 },
    #[error("evaluation range reaches the tip (u = {0})")]
    TipInRange(f64),
    #[error("time step {dt} exceeds CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("blow-up detected at time {time}: |rate| = {rate}")]
    BlowUpDetected { time: f64, rate: f64 },
    #[error("profile not monotone near node {0}")]
    NonMonotone(usize),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("adaptive step failed at rho = {0}")]
    StepFailure(f64),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("odd-mode coefficient {0} exceeds symmetry tolerance")]
    SymmetryViolation(f64),
    #[error("window too short: {0} samples per unit time")]
    WindowTooShort(usize),
    #[error("PDE residual {residual} exceeds tolerance {tol}")]
    NotASolution { residual: f64, tol: f64 },
    #[error("Y <= 0 at u = {0}")]
    DegenerateY(f64),
    #[error("u = {0} dips below the cutoff floor on the support")]
    RegionViolation(f64),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("parse error at line {line}, column {column}: {msg}")]
    ParseError { line: usize, column: usize, msg: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
