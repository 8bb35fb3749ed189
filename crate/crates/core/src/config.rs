//! Whole-toolkit configuration: one TOML table per environment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::education::EduConfig;
use crate::envs::healthcare::HealthConfig;
use crate::envs::loan::LoanConfig;
use crate::error::{MafeError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MafeConfig {
    pub loan: LoanConfig,
    pub healthcare: HealthConfig,
    pub education: EduConfig,
}

impl MafeConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MafeError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MafeError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Loads `path` (or the defaults) and applies `key.path=value` overrides,
    /// where each value is a TOML literal.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| MafeError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| MafeError::Config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let patch = parse_override(o)?;
            merge(&mut table, patch);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| MafeError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MafeError::Config(e.to_string()))
    }
}

fn parse_override(text: &str) -> Result<toml::Table> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| MafeError::Config(format!("override {text:?} is not key=value")))?;
    let doc = format!("v = {}", value.trim());
    let value = match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        // Bare words are taken as strings.
        Err(_) => toml::Value::String(value.trim().to_string()),
    };
    let mut out = value;
    for part in key.trim().split('.').rev() {
        if part.is_empty() {
            return Err(MafeError::Config(format!("override key {key:?} has an empty segment")));
        }
        let mut t = toml::Table::new();
        t.insert(part.to_string(), out);
        out = toml::Value::Table(t);
    }
    match out {
        toml::Value::Table(t) => Ok(t),
        _ => unreachable!(),
    }
}

/// Recursive merge; `patch` wins on conflicts.
pub fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
