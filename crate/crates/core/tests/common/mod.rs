#![allow(dead_code)]

use framerepeat_core::features::{cosine, FrameFeatureSet, QuestionEncoding, SampleRecord};
use framerepeat_core::numerics::DenseArray;
use framerepeat_core::scorer::{init_params, ScorerConfig, ScorerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A sample with random frames, tokens and pooled embedding.
pub fn random_sample(seed: u64, n: usize, l: usize, d: usize) -> SampleRecord {
    let mut r = rng(seed);
    let frames = DenseArray::matrix(n, d, uniform(&mut r, n * d, 1.0)).unwrap();
    let tokens = DenseArray::matrix(l, d, uniform(&mut r, l * d, 1.0)).unwrap();
    let pooled = uniform(&mut r, d, 1.0);
    let sims = (0..n).map(|i| cosine(frames.row(i), &pooled).unwrap()).collect();
    SampleRecord::new(
        format!("rand-{seed}"),
        FrameFeatureSet::new(frames, sims).unwrap(),
        QuestionEncoding::new(tokens, pooled).unwrap(),
        0,
        4,
    )
    .unwrap()
}

/// Initial parameters with every tensor jittered, so no gradient path is
/// masked by the zero-initialized head or unit LayerNorm gains.
pub fn perturbed_params(config: &ScorerConfig, seed: u64, scale: f64) -> ScorerParams {
    let mut p = init_params(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
    p
}
