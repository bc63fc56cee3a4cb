//! JSON configuration files.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bayes::SearchConfig;
use crate::error::{Error, Result};

/// A validated configuration and the hash of its effective values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: SearchConfig,
    pub hash: String,
}

/// SHA-256 over the canonical JSON of every effective field.
pub fn config_hash(config: &SearchConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a JSON object; an empty (or whitespace-only) text yields the defaults.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<LoadedConfig> {
    let config: SearchConfig = if text.trim().is_empty() {
        SearchConfig::default()
    } else {
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if !value.is_object() {
            return Err(parse_err("configuration must be a JSON object".into()));
        }
        serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?
    };
    config.validate()?;
    Ok(LoadedConfig {
        hash: config_hash(&config),
        config,
    })
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}
