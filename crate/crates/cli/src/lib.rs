//! Library surface of the command-line harness, exposed so the experiment
//! flows can be driven from integration tests.

pub mod cases;
pub mod commands;
pub mod config;
pub mod png;
pub mod table;

pub use config::ExperimentConfig;

/// Command-level error carrying the intended process exit code:
/// 1 for validation problems, 2 for runtime failures.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit_code: i32,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { message: msg.into(), exit_code: 1 }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { message: msg.into(), exit_code: 2 }
    }
}

impl From<hpqsm_core::CoreError> for CliError {
    fn from(e: hpqsm_core::CoreError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<hpqsm_net::NetError> for CliError {
    fn from(e: hpqsm_net::NetError) -> Self {
        CliError::runtime(e.to_string())
    }
}
