use std::fmt;

use trackdyn::Error;

/// Process exit codes; stable across releases.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_BAD_INPUT,
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DOMAIN,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    /// Prefix the message with what was being done.
    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Diverged { .. } | Error::TrainingDiverged { .. } | Error::Solver(_) | Error::Domain(_) => {
                EXIT_DOMAIN
            }
            Error::Dimension(_)
            | Error::Window { .. }
            | Error::Schema(_)
            | Error::Ordering { .. }
            | Error::Data { .. }
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::TomlDe(_) => EXIT_BAD_INPUT,
            Error::TomlSer(_) => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
