use thiserror::Error;

/// Errors raised by the model, solvers, integrator and verifier.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed kernel: {0}")]
    MalformedKernel(String),

    #[error("history not available at t = {t} (lower bound {lower_bound})")]
    InsufficientHistory { t: f64, lower_bound: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("hypothesis H1 violated: {0}")]
    H1Violation(String),

    #[error("root bracket failure for {what}: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NumericalBracket {
        what: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("response inverse undefined for argument {0}")]
    ResponseInverse(f64),

    #[error("positivity breach at t = {t}: component {component} = {value}")]
    PositivityBreach {
        t: f64,
        component: &'static str,
        value: f64,
    },

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("domain error in {what} at t = {t}: argument {value}")]
    Domain {
        what: &'static str,
        t: f64,
        value: f64,
    },

    #[error("window [{from}, {to}] not covered by trajectory and history")]
    InsufficientWindow { from: f64, to: f64 },

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("configuration error in [{section}]: {message}")]
    Config { section: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(section: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            section: section.into(),
            message: message.into(),
        }
    }

    /// Process exit status for this error: 2 for configuration or usage
    /// problems, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Usage(_)
            | Error::Validation(_)
            | Error::InvalidParameter { .. }
            | Error::MalformedKernel(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
