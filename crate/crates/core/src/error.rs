use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {index} outside table range 1..={cutoff}")]
    TableRange { index: usize, cutoff: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource budget exceeded: {what} needs {needed}, budget is {budget}")]
    Budget {
        what: &'static str,
        needed: u128,
        budget: u128,
    },

    #[error("cutoff mismatch: {left} vs {right}")]
    CutoffMismatch { left: usize, right: usize },

    #[error("numerically resonant sample: |Omega| = {omega:e} below floor {floor:e} for monomial {monomial}")]
    NumericallyResonant {
        omega: f64,
        floor: f64,
        monomial: String,
    },

    #[error("non-real nonlinearity: coefficient ({l},{m}) is not the conjugate of ({m},{l})")]
    NonRealNonlinearity { l: usize, m: usize },

    #[error("flow escaped the ball: norm grew from {initial:e} to {current:e}")]
    FlowEscape { initial: f64, current: f64 },

    #[error("norm blow-up at t = {time}: norm {norm:e} exceeds twice the initial {initial:e}")]
    BlowUp { time: f64, norm: f64, initial: f64 },

    #[error("sign calibration failed: residual {0:e}")]
    SignCalibration(f64),

    #[error("config rejected: {0}")]
    Config(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
