use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} is outside the schedule domain [0, {end})")]
    OutOfDomain { t: f64, end: f64 },

    #[error("invalid weight schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch in {field}: {detail}")]
    Dimension { field: String, detail: String },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("Riccati equation has no stabilizing solution: {0}")]
    NoSolution(String),

    #[error("ill-conditioned invariant subspace (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("matrix is not neutrally stable: eigenvalue {re}{im:+}i {reason}")]
    NotNeutrallyStable { re: f64, im: f64, reason: String },

    #[error("asymmetric input {name}: ‖M − Mᵀ‖ = {asymmetry:.3e}")]
    Asymmetric { name: String, asymmetry: f64 },

    #[error("state diverged after t = {last_finite_time}")]
    Divergence { last_finite_time: f64 },

    #[error("consensus error is numerically zero (‖e‖ = {norm:.3e})")]
    ConsensusReached { norm: f64 },

    #[error("trajectory span {span} is shorter than required {required}")]
    SpanTooShort { span: f64, required: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("Riccati solve failed for gamma = {gamma}: {source}")]
    SweepStep {
        gamma: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown design kind `{0}` (expected explicit, riccati, neutral_lyapunov or algorithm1)")]
    UnknownDesign(String),

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
