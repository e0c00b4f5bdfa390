//! The `manifest.json` written next to every command's outputs.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::InputError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
pub struct InputDigest {
    /// File name without its directory, so that moved inputs still match.
    pub name: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// Where the role inventory came from: `builtin` or `config-dir`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inventory: Option<&'static str>,
    pub config: C,
    /// Derived facts recorded for reference only; ignored when the
    /// manifest is read back as settings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived: Option<serde_json::Value>,
    pub inputs: Vec<InputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes =
        fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputDigest {
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(&bytes),
    })
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, seed: u64, config: C) -> Self {
        RunManifest {
            tool: "rolecirc",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            inventory: None,
            config,
            derived: None,
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
