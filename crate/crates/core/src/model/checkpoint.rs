//! Checkpoint container: a versioned JSON document holding the config, the
//! training step, the seed and every named parameter tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Weights;
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: ModelConfig,
    pub weights: Weights,
    pub rng_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    step: u64,
    rng_seed: u64,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

/// Step-0 checkpoint with seeded weights.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    Ok(Checkpoint {
        step: 0,
        config: config.clone(),
        weights: Weights::init(config, seed),
        rng_seed: seed,
    })
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut tensors = Vec::new();
        self.weights.visit(&self.config, |name, shape, data| {
            tensors.push(TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
        });
        let file = CheckpointFile {
            version: CHECKPOINT_FILE_VERSION,
            step: self.step,
            rng_seed: self.rng_seed,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse(context, "missing version field"))?;
        if version != u64::from(CHECKPOINT_FILE_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                expected: CHECKPOINT_FILE_VERSION,
            });
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| Error::parse(context, e))?;
        file.config.validate()?;
        let mut weights = Weights::zeros(&file.config);
        let mut expected = Vec::new();
        weights.visit(&file.config, |name, shape, _| expected.push((name, shape)));
        if expected.len() != file.tensors.len() {
            return Err(Error::Shape(format!(
                "{context}: expected {} tensors, found {}",
                expected.len(),
                file.tensors.len()
            )));
        }
        for ((slot, (name, shape)), rec) in weights
            .tensors_mut()
            .into_iter()
            .zip(&expected)
            .zip(&file.tensors)
        {
            if &rec.name != name || &rec.shape != shape || rec.data.len() != slot.len() {
                return Err(Error::Shape(format!(
                    "{context}: tensor {} has shape {:?}, expected {} with shape {:?}",
                    rec.name, rec.shape, name, shape
                )));
            }
            slot.copy_from_slice(&rec.data);
        }
        if !weights.all_finite() {
            return Err(Error::NonFinite {
                location: format!("{context}: weights"),
            });
        }
        Ok(Checkpoint {
            step: file.step,
            config: file.config,
            weights,
            rng_seed: file.rng_seed,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text, &path.display().to_string())
}

/// Checkpoint files of a directory, sorted by step. Steps must be strictly
/// increasing, which the file naming guarantees.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no checkpoints found in {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::tiny(2, 2, 8, 32);
        let a = init_model(&cfg, 11).unwrap();
        let b = init_model(&cfg, 11).unwrap();
        let c = init_model(&cfg, 12).unwrap();
        assert_eq!(a.step, 0);
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = ModelConfig::tiny(1, 2, 8, 16);
        let a = init_model(&cfg, 5).unwrap();
        let b = Checkpoint::from_json(&a.to_json(), "test").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let cfg = ModelConfig::tiny(1, 1, 4, 8);
        let text = init_model(&cfg, 1).unwrap().to_json();
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            Checkpoint::from_json(&bumped, "t"),
            Err(Error::Version { found: 9, .. })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["config"]["d_model"] = 5.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), "t"),
            Err(Error::Shape(_))
        ));
    }
}
