use std::fmt;

use hsln::Error;

pub const INPUT: i32 = 2;
pub const CONFIG: i32 = 3;
pub const NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: INPUT, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: CONFIG, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteGradient(_) | Error::DegenerateRank(_) | Error::ZeroVector => NUMERIC,
            Error::InvalidScheme(_)
            | Error::SchemeMismatchForSho
            | Error::DimMismatch(_)
            | Error::UnknownTask(_)
            | Error::InvalidArgument(_) => CONFIG,
            _ => INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}
