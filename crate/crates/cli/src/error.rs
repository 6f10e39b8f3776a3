use cascade_core::Error as CoreError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    /// A command completed but its statistical check failed.
    #[error("statistical failure: {0}")]
    Statistical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                CoreError::ProbabilityOverflow { .. } | CoreError::InvalidModel(_) | CoreError::Domain(_) => 2,
                CoreError::Inconclusive(_) => 4,
                _ => 3,
            },
            CliError::Statistical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Statistical(_) => "statistical",
            CliError::Core(e) => match e {
                CoreError::Domain(_) => "domain",
                CoreError::ProbabilityOverflow { .. } => "probability_overflow",
                CoreError::InvalidModel(_) => "invalid_model",
                CoreError::BudgetExceeded { .. } => "budget_exceeded",
                CoreError::NotConverged { .. } => "not_converged",
                CoreError::SchemeUnstable { .. } => "scheme_unstable",
                CoreError::EstimationFailed(_) => "estimation_failed",
                CoreError::Inconclusive(_) => "inconclusive",
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Core(CoreError::ProbabilityOverflow { suggested_c_b, .. }) = self {
            v["suggested_c_b"] = json!(suggested_c_b);
        }
        v
    }
}
