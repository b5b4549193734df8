//! Command-line front end: argument parsing, run-config layering and the
//! five subcommands.

pub mod commands;
pub mod config;

use std::fmt;

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICS: u8 = 3;

/// A failed command and the exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<g2gan::Error> for Failure {
    fn from(e: g2gan::Error) -> Self {
        use g2gan::Error as E;
        let code = match &e {
            E::Numerics(_) => EXIT_NUMERICS,
            E::Io { .. } | E::Image(_) | E::Tensor(_) | E::Json(_) => EXIT_IO,
            E::Config(_) | E::Dataset(_) | E::Label { .. } | E::Shape(_) | E::Eval(_) | E::Checkpoint(_) => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
