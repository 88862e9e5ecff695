#![allow(dead_code)]

use cnnlstm::model::{Batch, ModelDims};
use cnnlstm::text::{paragraph_batch, SentenceBatch, RESERVED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        vocab_size: 50,
        embed_dim: 8,
        windows: vec![2, 3],
        maps_per_window: 4,
        hidden: 16,
        paragraph_hidden: 16,
        ..ModelDims::default()
    }
}

/// Sentence of ordinary word ids.
pub fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, min: usize, max: usize) -> Vec<usize> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| rng.random_range(RESERVED.len()..vocab)).collect()
}

pub fn pair_batch(seed: u64, batch: usize, vocab: usize, min_len: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<Vec<usize>> = (0..batch).map(|_| random_sentence(&mut rng, vocab, 1, 7)).collect();
    let tgt: Vec<Vec<usize>> = (0..batch).map(|_| random_sentence(&mut rng, vocab, 1, 7)).collect();
    Batch::Pairs {
        source: SentenceBatch::new(&src, min_len).unwrap(),
        target: SentenceBatch::new(&tgt, min_len).unwrap(),
    }
}

pub fn paragraph_batch_of(seed: u64, batch: usize, sentences: usize, vocab: usize, min_len: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paragraphs: Vec<Vec<Vec<usize>>> = (0..batch)
        .map(|_| (0..sentences).map(|_| random_sentence(&mut rng, vocab, 1, 6)).collect())
        .collect();
    Batch::Paragraphs(paragraph_batch(&paragraphs, min_len).unwrap())
}
