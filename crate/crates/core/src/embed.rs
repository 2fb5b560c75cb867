//! Deterministic offline text embedding.
//!
//! Text is lowercased and split on every non-alphanumeric character. Each
//! token's FNV-1a 64-bit hash seeds a SplitMix64 stream that emits
//! `dimension` values in `[-1, 1)`; token vectors are summed and the sum is
//! L2-normalized. Text with no tokens yields the zero vector, which callers
//! detect with [`Embedding::is_degenerate`].

use crate::rng::{fnv1a64, SplitMix64};
use crate::similarity::Embedding;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn token_vector(token: &str, dimension: usize) -> impl Iterator<Item = f64> {
    let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()));
    (0..dimension).map(move |_| rng.next_signed_unit())
}

pub fn det_embed(text: &str, dimension: usize) -> Embedding {
    let dimension = dimension.max(1);
    let mut acc = vec![0.0f64; dimension];
    for token in tokenize(text) {
        for (a, v) in acc.iter_mut().zip(token_vector(&token, dimension)) {
            *a += v;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    Embedding::new(acc).expect("finite by construction")
}
