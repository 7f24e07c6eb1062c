use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("spec is not transient to the right: E[log rho] = {0}")]
    NotTransient(f64),
    #[error("no root of E[rho^s] = 1 in (0, 2): {0}")]
    NoRoot(String),
    #[error("moment diverges: {0}")]
    Divergence(String),
    #[error("insufficient window: {0}")]
    InsufficientWindow(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("excursion still running after {0} steps")]
    Runaway(usize),
    #[error("rejection budget of {budget} draws exhausted (acceptance rate about {rate:.3e})")]
    BudgetExhausted { budget: u64, rate: f64 },
    #[error("walk stepped left of the stored window at site {0}")]
    WindowExit(i64),
    #[error("horizon of {0} steps exceeded")]
    Horizon(u64),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("only {have} points in the fit window, need {need}")]
    TailPoints { have: usize, need: usize },
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
}

pub type Result<T> = std::result::Result<T, Error>;
