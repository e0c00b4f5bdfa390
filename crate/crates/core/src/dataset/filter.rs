use rayon::prelude::*;

use super::RoleCrossPair;
use crate::error::Result;
use crate::model::{forward, Checkpoint};

/// Anything that predicts the next token of a prompt.
pub trait Predictor: Sync {
    fn predict_next(&self, tokens: &[usize]) -> Result<usize>;
}

impl Predictor for Checkpoint {
    fn predict_next(&self, tokens: &[usize]) -> Result<usize> {
        let logits = forward(self, tokens)?;
        let v = self.config.vocab_size;
        let row = &logits[(tokens.len() - 1) * v..];
        let mut best = 0;
        for (i, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Pairs whose prediction matches the target on both sides, in input order.
pub fn filter_dual_correct<P: Predictor + ?Sized>(
    pairs: &[RoleCrossPair],
    model: &P,
) -> Result<Vec<RoleCrossPair>> {
    let keep = pairs
        .par_iter()
        .map(|p| -> Result<bool> {
            Ok(model.predict_next(&p.clean_tokens)? == p.target_clean
                && model.predict_next(&p.corrupt_tokens)? == p.target_corrupt)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(pairs
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect())
}
