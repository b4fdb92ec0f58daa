use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure in {context}: {detail} (residual {residual:.3e})")]
    NumericalFailure {
        context: &'static str,
        detail: String,
        residual: f64,
    },

    #[error("terminal synthesis failed: {0}")]
    SynthesisFailure(String),

    #[error("pattern 1 is infeasible at the initial state {state:?}")]
    InitialInfeasibility { state: Vec<f64> },

    #[error("no sampling pattern satisfies both trigger conditions at event {k} (t = {t}): {detail}")]
    ContractViolation { k: usize, t: f64, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(context: &'static str, detail: impl Into<String>, residual: f64) -> Self {
        Error::NumericalFailure {
            context,
            detail: detail.into(),
            residual,
        }
    }
}
