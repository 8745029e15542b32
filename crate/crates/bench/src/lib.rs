//! Shared fixtures for the benchmarks.

use blindeval::audio::sine;
use blindeval::AudioBuffer;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// `n` scores with alternating labels; positives shifted up by one.
pub fn labeled_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let positive: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let scores = positive.iter().map(|&p| rng.random::<f64>() + if p { 1.0 } else { 0.0 }).collect();
    (scores, positive)
}

pub fn tone(seconds: f64, rate: u32) -> AudioBuffer {
    AudioBuffer::mono(sine(440.0, 0.5, seconds, rate), rate).expect("finite tone")
}

pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
