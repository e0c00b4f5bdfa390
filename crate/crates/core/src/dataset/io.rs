//! Pairs file: one JSON record per line; token ids are recomputed on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inventory::Inventory;
use super::tokenizer::Tokenizer;
use super::RoleCrossPair;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub clean: String,
    pub corrupt: String,
    pub target_clean: String,
    pub target_corrupt: String,
    pub role_clean: String,
    pub role_corrupt: String,
}

pub fn pairs_to_jsonl(pairs: &[RoleCrossPair], tok: &Tokenizer) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        let rec = PairRecord {
            clean: p.clean_text.clone(),
            corrupt: p.corrupt_text.clone(),
            target_clean: tok.word(p.target_clean)?.to_string(),
            target_corrupt: tok.word(p.target_corrupt)?.to_string(),
            role_clean: p.role_clean.clone(),
            role_corrupt: p.role_corrupt.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn pairs_from_jsonl(text: &str, tok: &Tokenizer, context: &str) -> Result<Vec<RoleCrossPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{context} line {}", i + 1);
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| Error::parse(ctx(), e))?;
        let target = |w: &str| -> Result<usize> {
            let ids = tok.tokenize(w)?;
            if ids.len() != 1 {
                return Err(Error::parse(
                    ctx(),
                    format!("target {w:?} is not a single token"),
                ));
            }
            Ok(ids[0])
        };
        out.push(RoleCrossPair {
            clean_tokens: tok.tokenize(&rec.clean)?,
            corrupt_tokens: tok.tokenize(&rec.corrupt)?,
            target_clean: target(&rec.target_clean)?,
            target_corrupt: target(&rec.target_corrupt)?,
            clean_text: rec.clean,
            corrupt_text: rec.corrupt,
            role_clean: rec.role_clean,
            role_corrupt: rec.role_corrupt,
        });
    }
    Ok(out)
}

pub fn save_pairs(pairs: &[RoleCrossPair], inv: &Inventory, path: &Path) -> Result<()> {
    fs::write(path, pairs_to_jsonl(pairs, &inv.tokenizer)?).map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: &Path, inv: &Inventory) -> Result<Vec<RoleCrossPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    pairs_from_jsonl(&text, &inv.tokenizer, &path.display().to_string())
}
