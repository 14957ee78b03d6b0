use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] slu_core::Error),

    #[error("run directory {0} is locked by another process (remove run.lock if stale)")]
    Locked(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Locked(_) => "lock",
            CliError::Csv(_) => "csv",
            CliError::Usage(_) => "usage",
        }
    }

    /// The single-line form printed on failure:
    /// `error: kind=<kind> msg="<message>"`, with `"`, `\` and newlines
    /// escaped.
    pub fn machine_line(&self) -> String {
        machine_line(self.kind(), &self.to_string())
    }
}

pub fn machine_line(kind: &str, msg: &str) -> String {
    let mut escaped = String::with_capacity(msg.len());
    for c in msg.chars() {
        match c {
            '"' => escaped.push_str("\\\""),
            '\\' => escaped.push_str("\\\\"),
            '\n' => escaped.push_str("\\n"),
            '\r' => {}
            c => escaped.push(c),
        }
    }
    format!("error: kind={kind} msg=\"{escaped}\"")
}
