//! Shared fixtures for the benchmark suite.

use ima_core::checkpoint::ModelCheckpoint;
use ima_core::config::ModelConfig;
use ima_core::rng::Rng;
use ima_core::sequence::{Modality, TaggedSequence, Token};

pub fn bench_model() -> ModelCheckpoint {
    ModelCheckpoint::synthesize(&ModelConfig::toy(4, 32, 4, 96, 64), 42).unwrap()
}

pub fn bench_sequence(d: usize, n_perceptual: usize, n_text: usize) -> TaggedSequence {
    let mut rng = Rng::new(7);
    let mut tokens: Vec<Token> = (0..n_perceptual)
        .map(|_| {
            Token::perceptual(
                Modality::Image,
                (0..d).map(|_| rng.gaussian_f32(0.5)).collect(),
            )
        })
        .collect();
    tokens.extend((0..n_text).map(|_| Token::text(rng.next_below(64) as u32)));
    TaggedSequence::new(tokens)
}

pub fn random_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.gaussian_f32(1.0)).collect())
        .collect()
}
