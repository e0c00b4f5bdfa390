//! Layered command settings: built-in defaults, then a settings file, then
//! command-line flags.
//!
//! A settings file is either TOML with a top-level `seed` and one table per
//! command (`[train]`, `[timeline]`, ...), or a run manifest written by a
//! previous invocation of the same command.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::InputError;

/// Seed and per-command table read from a settings file.
#[derive(Debug, Default)]
pub struct FileSettings {
    pub seed: Option<u64>,
    pub section: Map<String, Value>,
}

pub fn load(path: &Path, command: &str) -> Result<FileSettings> {
    let text = fs::read_to_string(path)
        .map_err(|e| InputError(format!("cannot read settings file {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let root: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).context("converting settings table")?
    };
    let Value::Object(mut root) = root else {
        return Err(
            InputError(format!("{}: expected a table at top level", path.display())).into(),
        );
    };
    let seed = match root.remove("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| {
            InputError(format!(
                "{}: seed must be a non-negative integer",
                path.display()
            ))
        })?),
    };
    let section = if is_json {
        match root.get("command").and_then(Value::as_str) {
            Some(c) if c == command => {}
            Some(c) => {
                return Err(InputError(format!(
                    "{} is a manifest for `{c}`, not `{command}`",
                    path.display()
                ))
                .into())
            }
            None => {
                return Err(
                    InputError(format!("{}: manifest has no command", path.display())).into(),
                )
            }
        }
        root.remove("config")
    } else {
        root.remove(command)
    };
    let section = match section {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => {
            return Err(InputError(format!(
                "{}: settings for `{command}` must be a table",
                path.display()
            ))
            .into())
        }
    };
    Ok(FileSettings { seed, section })
}

/// Overlays set flags on the file section and deserializes the result;
/// fields missing from both take their defaults.
pub fn resolve<T: DeserializeOwned>(file: &FileSettings, flags: &impl Serialize) -> Result<T> {
    let mut merged = file.section.clone();
    let Value::Object(set) = serde_json::to_value(flags)? else {
        bail!("flags did not serialize to a table");
    };
    for (k, v) in set {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| InputError(format!("invalid settings: {e}")).into())
}
