//! Config file resolution. Precedence is flags, then file, then defaults.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Top-level tables that name a subcommand section.
pub const SECTIONS: [&str; 8] = ["data", "train-task", "train-editor", "edit", "evaluate", "ablate", "graph", "report"];

/// Reads `section` from a TOML file. A file without any section table is
/// taken whole. Missing keys fall back to the type's defaults.
pub fn load_section<T: DeserializeOwned + Default>(path: Option<&Path>, section: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)?;
    parse_section(&text, section)
}

pub fn parse_section<T: DeserializeOwned + Default>(text: &str, section: &str) -> Result<T> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
    let table = match doc.remove(section) {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(Error::config(section, "must be a table")),
        None if SECTIONS.iter().any(|s| doc.contains_key(*s)) => return Ok(T::default()),
        None => doc,
    };
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::config(section, e.message().to_string()))
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
