//! Hashed stand-in text embeddings.

use crate::numerics::{Rng, Tensor};

const NULL_TOKEN: &str = "<null>";

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    /// `[n_tok, d_model]`
    pub tokens: Tensor,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn token_vector(word: &str, d_model: usize) -> Vec<f64> {
    Rng::new(fnv1a(word.as_bytes())).normal_tensor(&[d_model]).into_data()
}

impl TextEmbedding {
    /// One seeded vector per whitespace-separated, lowercased word.
    /// An empty prompt maps to the null embedding.
    pub fn from_prompt(prompt: &str, d_model: usize) -> Self {
        let words: Vec<String> = prompt
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Self::null(d_model);
        }
        let data: Vec<f64> = words.iter().flat_map(|w| token_vector(w, d_model)).collect();
        Self {
            tokens: Tensor::new(vec![words.len(), d_model], data).expect("token rows"),
        }
    }

    /// Reserved embedding for the unconditional branch.
    pub fn null(d_model: usize) -> Self {
        Self {
            tokens: Tensor::new(vec![1, d_model], token_vector(NULL_TOKEN, d_model)).expect("one row"),
        }
    }

    /// Tokens sorted by their bit patterns. Cross-attention has no positional
    /// encoding on text, and the canonical order makes its reductions
    /// independent of the prompt's word order.
    pub fn canonical(&self) -> Tensor {
        let d = self.tokens.cols();
        let mut rows: Vec<&[f64]> = (0..self.tokens.rows()).map(|i| self.tokens.row(i)).collect();
        rows.sort_by(|a, b| a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits())));
        let data = rows.concat();
        Tensor::new(vec![data.len() / d, d], data).expect("token rows")
    }
}
