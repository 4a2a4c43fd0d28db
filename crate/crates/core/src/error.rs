use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("time {t} is outside the domain t > 0")]
    Domain { t: f64 },

    #[error("objective returned a non-finite value at t = {t} (|x| = {norm_x})")]
    Evaluation { t: f64, norm_x: f64 },

    #[error("KKT oracle did not converge: best residual {residual:.3e} > tol {tol:.3e}")]
    Oracle { residual: f64, tol: f64 },

    #[error("unknown problem `{name}`; valid names: {}", valid.join(", "))]
    UnknownProblem {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("rate estimation failed: {0}")]
    Estimation(String),

    #[error("config error at `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("integration terminated early: {0}")]
    Integration(String),

    #[error("acceptance failure: {0}")]
    Acceptance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::UnknownProblem { .. } | Error::Json(_) => 2,
            Error::Oracle { .. } => 3,
            Error::Integration(_) | Error::Evaluation { .. } | Error::Domain { .. } => 4,
            Error::Acceptance(_) => 5,
            _ => 1,
        }
    }
}
