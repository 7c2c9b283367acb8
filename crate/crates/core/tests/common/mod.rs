#![allow(dead_code)]

pub mod corrupt;
pub mod reference;

use mian::data::{generate, FakeType, NewsSample, SynthSpec};
use mian::model::{init_model, ModelConfig};
use mian::numerics::{ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Initialized parameters with every entry (biases and gains included)
/// nudged, so no term of the forward pass is trivially zero or one.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = init_model(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in p.iter_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p
}

/// Samples with arbitrary (non-synthetic-structure) values and a random
/// prefix mask.
pub fn random_samples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<NewsSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, u, d) = (cfg.m, cfg.u, cfg.d_model);
    (0..n)
        .map(|i| {
            let n_valid = rng.random_range(1..=m);
            let mut text = vec![0.0; m * d];
            for x in &mut text[..n_valid * d] {
                *x = rng.random_range(-1.0..1.0);
            }
            let mut fill = |k: usize| {
                (0..k)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<f64>>()
            };
            let text_cls = fill(d);
            let image = fill(u * d);
            let image_cls = fill(d);
            let fake_type = FakeType::KNOWN[i % 4];
            NewsSample {
                text_tokens: Tensor::matrix(m, d, text).unwrap(),
                text_cls: Tensor::vector(text_cls).unwrap(),
                text_mask: (0..m).map(|r| r < n_valid).collect(),
                image_patches: Tensor::matrix(u, d, image).unwrap(),
                image_cls: Tensor::vector(image_cls).unwrap(),
                label: fake_type.label().unwrap(),
                fake_type,
            }
        })
        .collect()
}

pub fn synth_for(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<NewsSample> {
    generate(&SynthSpec {
        n_samples: n,
        m: cfg.m,
        u: cfg.u,
        d: cfg.d_model,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
