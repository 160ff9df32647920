#![allow(dead_code)]

use mirror_core::corpus::{encode_batch, tokenize, Batch, Triple, Vocabulary};
use mirror_core::model::{MirrorModel, ModelConfig};

pub const WORDS: [&str; 8] = ["apple", "bird", "cat", "dog", "egg", "fish", "goat", "hat"];

pub fn vocab() -> Vocabulary {
    Vocabulary::from_tokens(WORDS.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embed_dim: 4,
        hidden_dim: 5,
        z_dim: 3,
        layers: 2,
    }
}

pub fn tiny_model(seed: u64) -> MirrorModel<f64> {
    let v = vocab();
    MirrorModel::new(tiny_config(v.len()), v, seed).unwrap()
}

pub fn triple(c: &str, x: &str, y: &str) -> Triple {
    Triple::new(vec![tokenize(c)], tokenize(x), tokenize(y)).unwrap()
}

/// Three triples of different lengths so padding is exercised.
pub fn triples() -> Vec<Triple> {
    vec![
        triple("apple bird", "cat", "dog egg fish"),
        triple("goat", "hat apple bird cat", "dog"),
        triple("egg fish goat hat", "bird", "cat apple"),
    ]
}

pub fn batch(vocab: &Vocabulary) -> Batch {
    encode_batch(&triples(), vocab, 10).unwrap()
}
