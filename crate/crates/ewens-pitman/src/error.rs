use thiserror::Error;

/// Unified error type for the crate.
///
/// Numerical routines distinguish *domain* violations (caller handed an
/// argument outside the documented range) from *accuracy* failures (the
/// algorithm ran out of budget before reaching the requested tolerance).
/// Accuracy failures carry the best estimate produced so far, so callers
/// that can live with a degraded answer may still use it.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the documented domain.
    #[error("domain error in {context}: {message}")]
    Domain {
        /// Routine that rejected the argument.
        context: &'static str,
        /// What was out of range.
        message: String,
    },

    /// Requested tolerance not reached within the configured budget.
    #[error("accuracy target not reached in {context} (best estimate {best_estimate:e})")]
    Accuracy {
        /// Routine that ran out of budget.
        context: &'static str,
        /// Last estimate before giving up.
        best_estimate: f64,
    },

    /// Exact integer computation exceeded the representable range.
    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    /// Invalid model or experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Operation applied to a state that cannot support it.
    #[error("invalid state: {0}")]
    State(String),

    /// Report serialization or I/O failure.
    #[error("report error: {0}")]
    Report(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(context: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            context,
            message: message.into(),
        }
    }
}
