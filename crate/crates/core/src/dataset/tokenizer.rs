use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Word-level tokenizer over a closed vocabulary. Text is lowercased and
/// split on whitespace; ids follow alphabetical order of the words.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .flat_map(|w| {
                w.as_ref()
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .collect();
        let words: Vec<String> = set.into_iter().collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.index
            .get(&word.to_lowercase())
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn word(&self, id: usize) -> Result<&str> {
        self.words
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.words.len(),
            })
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&i| self.word(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok() -> Tokenizer {
        Tokenizer::new(["The driver", "sent", "to the", "office"])
    }

    #[test]
    fn scaffold_is_two_tokens() {
        assert_eq!(tok().tokenize("to the").unwrap().len(), 2);
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(tok().tokenize("").unwrap().is_empty());
    }

    #[test]
    fn ids_are_alphabetical_and_case_folded() {
        let t = tok();
        assert_eq!(t.words(), ["driver", "office", "sent", "the", "to"]);
        assert_eq!(t.tokenize("The THE the").unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn unknown_word_is_named() {
        match tok().tokenize("to the moon") {
            Err(Error::UnknownWord(w)) => assert_eq!(w, "moon"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn detokenize_round_trips(ids in proptest::collection::vec(0usize..5, 0..12)) {
            let t = tok();
            let text = t.detokenize(&ids).unwrap();
            prop_assert_eq!(t.tokenize(&text).unwrap(), ids);
        }
    }
}
