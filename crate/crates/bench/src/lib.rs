//! Seeded inputs shared by the benchmarks.

use apc_tdsv::frontend::{AudioBuffer, FeatureMatrix};
use apc_tdsv::tensor::Tensor;
use apc_tdsv::{seeded_rng, ModelRng};
use rand::Rng;

pub const SAMPLE_RATE: u32 = 16_000;

/// A harmonic tone with a little noise, `seconds` long.
pub fn tone_audio(seconds: f64, seed: u64) -> AudioBuffer {
    let mut rng = seeded_rng(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let voiced: f64 = (1..=6).map(|h| (std::f64::consts::TAU * 220.0 * h as f64 * t).sin() / h as f64).sum();
            0.2 * voiced + rng.random_range(-0.01..0.01)
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE).expect("valid audio")
}

pub fn uniform_matrix(rng: &mut ModelRng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

pub fn features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let t = uniform_matrix(&mut seeded_rng(seed), frames, dim);
    FeatureMatrix::from_tensor(&t).expect("shape")
}

/// `speakers × per_speaker` vectors with a speaker offset plus noise.
pub fn clustered_vectors(speakers: usize, per_speaker: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let mut vectors = Vec::with_capacity(speakers * per_speaker);
    let mut labels = Vec::with_capacity(speakers * per_speaker);
    for s in 0..speakers {
        let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        for _ in 0..per_speaker {
            vectors.push(centre.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect());
            labels.push(s);
        }
    }
    (vectors, labels)
}

/// Target scores shifted up by `separation` against standard non-targets.
pub fn score_sets(targets: usize, nontargets: usize, separation: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let t = (0..targets).map(|_| rng.random_range(-1.0..1.0) + separation).collect();
    let n = (0..nontargets).map(|_| rng.random_range(-1.0..1.0)).collect();
    (t, n)
}
