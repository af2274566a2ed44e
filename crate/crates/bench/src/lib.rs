//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skel2vec::data::{generate_synthetic_dataset, Dataset, SyntheticSpec};
use skel2vec::nn::ModelConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` uniform values in `[-1, 1)`.
pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// The 4-layer, 64-wide encoder on 15 joints and 10 segments.
pub fn toy_model() -> ModelConfig {
    ModelConfig {
        enc_layers: 4,
        dec_layers: 1,
        dim: 64,
        heads: 4,
        ffn_dim: 128,
        joints: 15,
        segments: 10,
        ..ModelConfig::tiny()
    }
}

pub fn toy_dataset(per_class: usize) -> Dataset {
    generate_synthetic_dataset(&SyntheticSpec {
        per_class,
        ..SyntheticSpec::default()
    })
    .expect("default synthetic spec is valid")
}
