//! Config-file support: every subcommand accepts `--config file.json` whose
//! keys mirror the flag names; explicit flags override file values.

use std::path::Path;

use lpbf_thermal::{Error, Result};
use serde::de::DeserializeOwned;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: path.display().to_string(),
        row: e.line(),
        message: e.to_string(),
    })
}

/// Flag value wins over the config-file value.
pub fn merge<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidParams(format!("--{flag} is required (flag or config file)")))
}
