//! Synthetic training text drawn from the same templates as the pairs.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::generate::prompt;
use super::inventory::{Inventory, Lexicon};
use crate::rng::{derive_seed, rng_for};

/// Probability that a training sentence ends in the theme's preferred
/// filler rather than a uniformly drawn one.
const PREFERRED_RATE: f64 = 0.8;

/// The filler a role prefers for a given theme, fixed by hashing.
pub fn preferred_filler<'a>(lex: &'a Lexicon, theme: &str) -> &'a str {
    let h = derive_seed(0, &format!("{}/{theme}", lex.role));
    &lex.fillers[(h % lex.fillers.len() as u64) as usize]
}

/// `n_docs` complete sentences "The <agent> <verb> the <theme> <scaffold>
/// <filler>", one per returned string.
pub fn synth_corpus(inv: &Inventory, n_docs: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, "corpus");
    let mut out = Vec::with_capacity(n_docs);
    while out.len() < n_docs {
        let t = inv
            .templates
            .choose(&mut rng)
            .expect("templates are non-empty");
        let allowed: Vec<&Lexicon> = inv.lexicons.iter().filter(|l| t.allows(&l.role)).collect();
        let Some(lex) = allowed.choose(&mut rng) else {
            continue;
        };
        let agent = t.agents.choose(&mut rng).expect("non-empty");
        let theme = t.themes.choose(&mut rng).expect("non-empty");
        let scaffolds: Vec<&String> = lex.all_scaffolds().collect();
        let scaffold = scaffolds.choose(&mut rng).expect("non-empty");
        let filler = if rng.random_bool(PREFERRED_RATE) {
            preferred_filler(lex, theme)
        } else {
            lex.fillers.choose(&mut rng).expect("non-empty")
        };
        out.push(format!(
            "{} {filler}",
            prompt(agent, &t.verb, theme, scaffold)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded_and_tokenizable() {
        let inv = Inventory::builtin();
        let a = synth_corpus(&inv, 50, 4);
        assert_eq!(a, synth_corpus(&inv, 50, 4));
        assert_ne!(a, synth_corpus(&inv, 50, 5));
        for doc in &a {
            assert!(inv.tokenizer.tokenize(doc).is_ok());
        }
    }
}
