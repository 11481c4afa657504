//! Command-line orchestration: config parsing, the four subcommands, the
//! diagnostics CSV stream and exit statuses.

pub mod config;
pub mod csv;
pub mod run;

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

use crate::error::Error;

pub use config::{parse_config, RunConfig};
pub use run::{run, Command, Report};

/// Failures that end a CLI invocation, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {reason}")]
    MissingFile { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingFile { .. } => 2,
            CliError::Parse(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Runtime(Error::InvalidDomain(_)) => 4,
            CliError::Runtime(_) => 1,
        }
    }

    /// JSON error report for stdout.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            CliError::MissingFile { .. } => "missing-file",
            CliError::Parse(_) => "parse-error",
            CliError::Invalid(_) | CliError::Runtime(Error::InvalidDomain(_)) => "invalid-config",
            CliError::Runtime(Error::BlowUp { .. }) => "blow-up",
            CliError::Runtime(_) => "runtime-error",
        };
        let mut out = json!({
            "status": kind,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Invalid(v) | CliError::Runtime(Error::InvalidDomain(v)) => {
                out["violations"] = json!(v);
            }
            CliError::Runtime(Error::BlowUp { time, reason }) => {
                out["time"] = json!(time);
                out["reason"] = json!(reason);
            }
            _ => {}
        }
        out
    }
}

/// Sizes the global rayon pool: one thread when `strict`, otherwise
/// `HYDROPRIM_THREADS` if set. Returns the resulting worker count.
pub fn configure_threads(strict: bool) -> Result<usize, CliError> {
    let requested = if strict {
        Some(1)
    } else {
        match std::env::var("HYDROPRIM_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                CliError::Invalid(vec![format!("HYDROPRIM_THREADS must be a positive integer (got {s:?})")])
            })?),
            Err(_) => None,
        }
    };
    if let Some(n) = requested {
        // A pool built earlier in the process wins; the count below reports it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
