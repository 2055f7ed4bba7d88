use thiserror::Error;

/// Errors raised by the library. Report-style checks (validators, verifiers)
/// return reports instead and only fail on malformed input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed fluid solution: {0}")]
    MalformedSolution(String),

    #[error("time {t} outside solution domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fluid solution failed validation: {0}")]
    FluidViolation(String),

    #[error("no witness: {0}")]
    NoWitness(String),

    #[error("priority fluid exceeded the event cap after {events} events")]
    EventCap {
        events: usize,
        partial: Box<crate::fluid::FluidSolution>,
    },

    #[error("degenerate phase structure at t = {t}: {reason}")]
    Degenerate { t: f64, reason: String },

    #[error("decomposition requires exactly two stations, network has {0}")]
    NotTwoStations(usize),

    #[error("non-idling violation at station {station}, t = {time}")]
    NonIdling { station: usize, time: f64 },

    #[error("policy chose invalid class {class} at station {station}, t = {time}")]
    InvalidClass {
        station: usize,
        class: usize,
        time: f64,
    },

    #[error("event budget of {0} exceeded")]
    EventBudget(u64),

    #[error("incomplete priority order: {0}")]
    IncompletePriority(String),

    #[error("unsupported distribution family for this operation: {0}")]
    Unsupported(String),

    #[error("plan and fluid solution do not match: {0}")]
    PlanMismatch(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
