use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalScheme {
    Learned,
    Sinusoidal,
}

/// Shape of a pre-norm decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub positional_scheme: PositionalScheme,
    /// Replace layer norm, GELU and the attention softmax by fixed linear
    /// maps (identity, identity, uniform causal weights). Used as a
    /// reference network on which first-order attribution is exact.
    #[serde(default)]
    pub linearized: bool,
}

impl ModelConfig {
    /// Small config with `d_head = d_model / n_heads` and a 4x MLP.
    pub fn tiny(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_head: (d_model / n_heads).max(1),
            d_mlp: 4 * d_model,
            vocab_size,
            max_seq_len: 16,
            positional_scheme: PositionalScheme::Learned,
            linearized: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_head * self.n_heads > self.d_model {
            tracing::warn!(
                d_head = self.d_head,
                n_heads = self.n_heads,
                d_model = self.d_model,
                "d_head * n_heads exceeds d_model"
            );
        }
        Ok(())
    }

    /// Stable identifier embedded in graph files.
    pub fn id(&self) -> String {
        let pos = match self.positional_scheme {
            PositionalScheme::Learned => "learned",
            PositionalScheme::Sinusoidal => "sinusoidal",
        };
        format!(
            "L{}-H{}-d{}-dh{}-dm{}-v{}-T{}-{}{}",
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_head,
            self.d_mlp,
            self.vocab_size,
            self.max_seq_len,
            pos,
            if self.linearized { "-linear" } else { "" }
        )
    }

    pub fn n_params(&self) -> usize {
        let (d, dh, dm, h) = (self.d_model, self.d_head, self.d_mlp, self.n_heads);
        let pos = match self.positional_scheme {
            PositionalScheme::Learned => self.max_seq_len * d,
            PositionalScheme::Sinusoidal => 0,
        };
        let attn = 3 * h * (d * dh + dh) + h * dh * d;
        let mlp = d * dm + dm + dm * d + d;
        let per_layer = 4 * d + attn + mlp;
        self.vocab_size * d + pos + self.n_layers * per_layer + 2 * d + d * self.vocab_size
    }
}
