//! Pair generation, validation and summary statistics.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::inventory::{Inventory, Lexicon};
use super::RoleCrossPair;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Attempts allowed per requested pair before giving up.
const PATIENCE_FACTOR: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub pairs: Vec<RoleCrossPair>,
    pub attempts: usize,
    /// True when the attempt budget ran out before `n` pairs were found.
    pub exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Parity,
    Leakage,
    /// A word that does not map to exactly one token.
    MultiToken(String),
    SameRole,
    /// Target is not a filler of its role, or the filler is shared with the
    /// partner role.
    TargetNotDiscriminative,
    /// Texts or tokens differ outside the scaffold span.
    NonMinimal,
    UnknownScaffold,
    TokenMismatch,
}

pub(crate) fn prompt(agent: &str, verb: &str, theme: &str, scaffold: &str) -> String {
    format!("The {agent} {verb} the {theme} {scaffold}")
}

/// Length of the longest scaffold of `lex` that ends `text`.
pub(crate) fn scaffold_suffix<'a>(lex: &'a Lexicon, text: &str) -> Option<&'a String> {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    lex.all_scaffolds()
        .filter(|s| {
            let sw: Vec<&str> = s.split_whitespace().collect();
            sw.len() < words.len()
                && words[words.len() - sw.len()..]
                    .iter()
                    .zip(&sw)
                    .all(|(a, b)| a == b)
        })
        .max_by_key(|s| s.split_whitespace().count())
}

struct CleanOption<'a> {
    scaffold: &'a String,
    len: usize,
    partners: Vec<&'a Lexicon>,
}

/// Up to `n` validated minimal pairs whose clean side uses role `role`.
pub fn generate_pairs(inv: &Inventory, role: &str, n: usize, seed: u64) -> Result<Generated> {
    let lex_r = inv.lexicon(role)?;
    let mut per_template: Vec<(usize, Vec<CleanOption<'_>>)> = Vec::new();
    for (ti, t) in inv.templates.iter().enumerate() {
        if !t.allows(&lex_r.role) {
            continue;
        }
        let mut options = Vec::new();
        for (&len, group) in &lex_r.scaffolds {
            let partners: Vec<&Lexicon> = inv
                .lexicons
                .iter()
                .filter(|s| {
                    s.role != lex_r.role && t.allows(&s.role) && s.scaffolds.contains_key(&len)
                })
                .filter(|s| s.fillers.iter().any(|f| !lex_r.fillers.contains(f)))
                .filter(|s| lex_r.fillers.iter().any(|f| !s.fillers.contains(f)))
                .collect();
            if partners.is_empty() {
                continue;
            }
            for scaffold in group {
                options.push(CleanOption {
                    scaffold,
                    len,
                    partners: partners.clone(),
                });
            }
        }
        if !options.is_empty() {
            per_template.push((ti, options));
        }
    }
    if per_template.is_empty() {
        return Err(Error::NoPartnerRole {
            role: lex_r.role.clone(),
        });
    }

    let mut rng = rng_for(seed, &format!("pairs/{}", lex_r.role));
    let budget = PATIENCE_FACTOR * n;
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0;
    while pairs.len() < n && attempts < budget {
        attempts += 1;
        let (ti, options) = &per_template[rng.random_range(0..per_template.len())];
        let t = &inv.templates[*ti];
        let opt = &options[rng.random_range(0..options.len())];
        let agent = t.agents.choose(&mut rng).expect("non-empty agents");
        let theme = t.themes.choose(&mut rng).expect("non-empty themes");
        let lex_s = opt.partners[rng.random_range(0..opt.partners.len())];
        let corrupt_scaffold = lex_s.scaffolds[&opt.len]
            .choose(&mut rng)
            .expect("non-empty group");
        let y_r = lex_r.fillers.choose(&mut rng).expect("non-empty fillers");
        let y_s = lex_s.fillers.choose(&mut rng).expect("non-empty fillers");
        let Some(pair) = build_pair(
            inv,
            lex_r,
            lex_s,
            &t.verb,
            agent,
            theme,
            opt.scaffold,
            corrupt_scaffold,
            y_r,
            y_s,
        ) else {
            continue;
        };
        if validate_pair(&pair, inv).is_empty() {
            pairs.push(pair);
        }
    }
    let exhausted = pairs.len() < n;
    if exhausted {
        tracing::warn!(
            role = %lex_r.role,
            requested = n,
            produced = pairs.len(),
            attempts,
            "patience limit reached; returning a partial pair set"
        );
    }
    Ok(Generated {
        pairs,
        attempts,
        exhausted,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_pair(
    inv: &Inventory,
    lex_r: &Lexicon,
    lex_s: &Lexicon,
    verb: &str,
    agent: &str,
    theme: &str,
    clean_scaffold: &str,
    corrupt_scaffold: &str,
    y_r: &str,
    y_s: &str,
) -> Option<RoleCrossPair> {
    let clean_text = prompt(agent, verb, theme, clean_scaffold);
    let corrupt_text = prompt(agent, verb, theme, corrupt_scaffold);
    let tok = &inv.tokenizer;
    Some(RoleCrossPair {
        clean_tokens: tok.tokenize(&clean_text).ok()?,
        corrupt_tokens: tok.tokenize(&corrupt_text).ok()?,
        target_clean: tok.id(y_r).ok()?,
        target_corrupt: tok.id(y_s).ok()?,
        clean_text,
        corrupt_text,
        role_clean: lex_r.role.clone(),
        role_corrupt: lex_s.role.clone(),
    })
}

/// Every constraint a pair breaks, re-derived from its texts.
pub fn validate_pair(pair: &RoleCrossPair, inv: &Inventory) -> Vec<Violation> {
    let mut out = Vec::new();
    let tok = &inv.tokenizer;
    for word in pair
        .clean_text
        .split_whitespace()
        .chain(pair.corrupt_text.split_whitespace())
    {
        if tok.tokenize(word).map(|t| t.len()).ok() != Some(1) {
            out.push(Violation::MultiToken(word.to_string()));
        }
    }
    let (Ok(clean), Ok(corrupt)) = (
        tok.tokenize(&pair.clean_text),
        tok.tokenize(&pair.corrupt_text),
    ) else {
        return out;
    };
    if clean != pair.clean_tokens || corrupt != pair.corrupt_tokens {
        out.push(Violation::TokenMismatch);
    }
    if clean.len() != corrupt.len() {
        out.push(Violation::Parity);
    }
    let targets = [pair.target_clean, pair.target_corrupt];
    if clean.iter().chain(&corrupt).any(|t| targets.contains(t)) {
        out.push(Violation::Leakage);
    }
    if pair.role_clean == pair.role_corrupt {
        out.push(Violation::SameRole);
    }
    let (Ok(lex_r), Ok(lex_s)) = (
        inv.lexicon(&pair.role_clean),
        inv.lexicon(&pair.role_corrupt),
    ) else {
        out.push(Violation::TargetNotDiscriminative);
        return out;
    };
    let word = |id| tok.word(id).map(str::to_string).unwrap_or_default();
    let (y_r, y_s) = (word(pair.target_clean), word(pair.target_corrupt));
    if !lex_r.fillers.contains(&y_r)
        || !lex_s.fillers.contains(&y_s)
        || lex_s.fillers.contains(&y_r)
        || lex_r.fillers.contains(&y_s)
    {
        out.push(Violation::TargetNotDiscriminative);
    }
    match (
        scaffold_suffix(lex_r, &pair.clean_text),
        scaffold_suffix(lex_s, &pair.corrupt_text),
    ) {
        (Some(a), Some(b)) => {
            let (la, lb) = (a.split_whitespace().count(), b.split_whitespace().count());
            let keep_a = clean.len() - la;
            let keep_b = corrupt.len() - lb;
            if la != lb || clean[..keep_a] != corrupt[..keep_b] {
                out.push(Violation::NonMinimal);
            }
        }
        _ => out.push(Violation::UnknownScaffold),
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_pairs: usize,
    pub per_role: BTreeMap<String, usize>,
    pub parity_rate: f64,
    pub leakage_rate: f64,
}

/// Per-role counts with parity and leakage recomputed from the token
/// sequences. Rates are 1 and 0 on an empty set.
pub fn dataset_stats(pairs: &[RoleCrossPair]) -> DatasetStats {
    let mut per_role = BTreeMap::new();
    let mut parity = 0usize;
    let mut leaks = 0usize;
    for p in pairs {
        *per_role.entry(p.role_clean.clone()).or_insert(0) += 1;
        if p.clean_tokens.len() == p.corrupt_tokens.len() {
            parity += 1;
        }
        let targets = [p.target_clean, p.target_corrupt];
        if p.clean_tokens
            .iter()
            .chain(&p.corrupt_tokens)
            .any(|t| targets.contains(t))
        {
            leaks += 1;
        }
    }
    let n = pairs.len();
    DatasetStats {
        n_pairs: n,
        per_role,
        parity_rate: if n == 0 {
            1.0
        } else {
            parity as f64 / n as f64
        },
        leakage_rate: if n == 0 { 0.0 } else { leaks as f64 / n as f64 },
    }
}

/// Pairs whose sequence length is the most common one (shortest on ties).
pub fn pairs_with_modal_length(pairs: &[RoleCrossPair]) -> Vec<RoleCrossPair> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.clean_tokens.len()).or_insert(0) += 1;
    }
    let Some(best) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&l, _)| l)
    else {
        return Vec::new();
    };
    pairs
        .iter()
        .filter(|p| p.clean_tokens.len() == best)
        .cloned()
        .collect()
}
