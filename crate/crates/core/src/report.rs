// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run reports: every command result is wrapped together with the full
//! configuration and the toolkit version, with no timestamps, so identical
//! runs write identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discovery::DiscoveryConfig;
use crate::error::{GccError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub dataset: Option<String>,
    pub index: Option<String>,
    pub queries: Option<String>,
    /// Query ids (sample positions in the query pack), empty for "all".
    pub query_ids: Vec<String>,
    pub discovery: DiscoveryConfig,
    pub seed: u64,
    pub metric: String,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub toolkit: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub result: T,
}

impl<T: Serialize> RunReport<T> {
    pub fn new(command: &str, config: RunConfig, result: T) -> Self {
        Self {
            toolkit: "gcc".into(),
            version: crate::VERSION.into(),
            command: command.into(),
            config,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GccError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| GccError::io(path, e))
}
