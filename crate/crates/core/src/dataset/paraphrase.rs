use rand::seq::IndexedRandom;

use super::generate::scaffold_suffix;
use super::inventory::Inventory;
use super::RoleCrossPair;
use crate::error::Result;
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct Paraphrased {
    /// Pairs with the clean scaffold swapped for another scaffold of the
    /// same role and length; corrupt side, targets and roles unchanged.
    pub pairs: Vec<RoleCrossPair>,
    /// Indices of input pairs that had no alternative scaffold.
    pub skipped: Vec<usize>,
}

/// Within-role paraphrase of every pair's clean prompt.
pub fn generate_paraphrase_controls(
    pairs: &[RoleCrossPair],
    inv: &Inventory,
    seed: u64,
) -> Result<Paraphrased> {
    let mut rng = rng_for(seed, "paraphrase");
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let lex = inv.lexicon(&p.role_clean)?;
        let Some(original) = scaffold_suffix(lex, &p.clean_text) else {
            tracing::warn!(
                pair = i,
                "clean scaffold not found in its role lexicon; skipped"
            );
            skipped.push(i);
            continue;
        };
        let len = original.split_whitespace().count();
        let alternatives: Vec<&String> = lex.scaffolds[&len]
            .iter()
            .filter(|s| *s != original)
            .collect();
        let Some(alt) = alternatives.choose(&mut rng) else {
            tracing::debug!(pair = i, role = %p.role_clean, "role has a single scaffold of this length; skipped");
            skipped.push(i);
            continue;
        };
        let words: Vec<&str> = p.clean_text.split_whitespace().collect();
        let prefix = words[..words.len() - len].join(" ");
        let clean_text = format!("{prefix} {alt}");
        let clean_tokens = inv.tokenizer.tokenize(&clean_text)?;
        out.push(RoleCrossPair {
            clean_text,
            clean_tokens,
            ..p.clone()
        });
    }
    Ok(Paraphrased {
        pairs: out,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_pairs, validate_pair};

    #[test]
    fn location_paraphrase_keeps_target() {
        let inv = Inventory::builtin();
        let pairs = generate_pairs(&inv, "location", 50, 2).unwrap().pairs;
        let para = generate_paraphrase_controls(&pairs, &inv, 9).unwrap();
        assert!(para.skipped.is_empty());
        for (orig, new) in pairs.iter().zip(&para.pairs) {
            assert_eq!(orig.target_clean, new.target_clean);
            assert_eq!(orig.clean_tokens.len(), new.clean_tokens.len());
            assert_ne!(orig.clean_text, new.clean_text);
            assert!(validate_pair(new, &inv).is_empty());
        }
        let in_the: Vec<_> = pairs
            .iter()
            .zip(&para.pairs)
            .filter(|(o, _)| o.clean_text.ends_with("in the"))
            .collect();
        for (_, n) in in_the {
            assert!(n.clean_text.ends_with("at the") || n.clean_text.ends_with("near the"));
        }
    }

    #[test]
    fn single_scaffold_role_is_skipped() {
        let inv = Inventory::builtin();
        let pairs: Vec<_> = generate_pairs(&inv, "beneficiary", 20, 2)
            .unwrap()
            .pairs
            .into_iter()
            .filter(|p| p.clean_text.ends_with("for the"))
            .collect();
        assert!(!pairs.is_empty());
        let para = generate_paraphrase_controls(&pairs, &inv, 1).unwrap();
        assert!(para.pairs.is_empty());
        assert_eq!(para.skipped.len(), pairs.len());
    }
}
