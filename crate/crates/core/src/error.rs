use thiserror::Error;

/// Errors raised by the lattice model, the solvers and the analysis layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration has no alive site")]
    NoAliveSite,

    #[error("singular flux: mass reached zero at site {site} (t = {time})")]
    Singularity { site: usize, time: f64 },

    #[error("step limit of {max_steps} exceeded at t = {time}")]
    StepLimit { max_steps: usize, time: f64 },

    #[error("non-finite value detected at site {site} (t = {time})")]
    NotFinite { site: usize, time: f64 },

    #[error("step size underflow at t = {time} (dt = {dt:e})")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("equilibration not reached by t = {t_max}; residual deviation {deviation}")]
    EquilibrationTimeout { t_max: f64, deviation: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
