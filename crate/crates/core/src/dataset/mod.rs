//! Role-cross minimal pairs over a closed, word-level vocabulary.

mod corpus;
mod filter;
mod generate;
mod inventory;
mod io;
mod paraphrase;
mod tokenizer;

use serde::{Deserialize, Serialize};

pub use corpus::{preferred_filler, synth_corpus};
pub use filter::{filter_dual_correct, Predictor};
pub use generate::{
    dataset_stats, generate_pairs, pairs_with_modal_length, validate_pair, DatasetStats, Generated,
    Violation,
};
pub use inventory::{Inventory, Lexicon, Template, CONFIG_DIR_ENV, LEXICON_FILE, TEMPLATE_FILE};
pub use io::{load_pairs, pairs_from_jsonl, pairs_to_jsonl, save_pairs, PairRecord};
pub use paraphrase::{generate_paraphrase_controls, Paraphrased};
pub use tokenizer::Tokenizer;

/// A clean/corrupt prompt pair differing only in the role scaffold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleCrossPair {
    pub clean_text: String,
    pub corrupt_text: String,
    pub clean_tokens: Vec<usize>,
    pub corrupt_tokens: Vec<usize>,
    pub target_clean: usize,
    pub target_corrupt: usize,
    pub role_clean: String,
    pub role_corrupt: String,
}
