//! Synthetic embeddings for the three kinds of news the model must tell
//! apart: consistent real items, items with one internally inconsistent
//! modality, and items whose text and image come from different topics.
//!
//! All values are rounded to `f32` precision so a generated set survives a
//! trip through the on-disk format bit for bit.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FakeType, NewsSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub m: usize,
    pub u: usize,
    pub d: usize,
    pub n_topics: usize,
    pub noise_sigma: f64,
    /// Share of tokens (or patches) swapped to a foreign topic in a
    /// fabricated sample.
    pub corrupt_fraction: f64,
    /// Proportions of real, fabricated-text, fabricated-image, mismatched.
    pub class_mix: [f64; 4],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            m: 16,
            u: 16,
            d: 32,
            n_topics: 8,
            noise_sigma: 0.1,
            corrupt_fraction: 0.25,
            class_mix: [0.25; 4],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_topics < 2 {
            return err(format!(
                "n_topics must be at least 2 for mismatched samples, got {}",
                self.n_topics
            ));
        }
        if self.n_samples == 0 || self.m == 0 || self.u == 0 || self.d == 0 {
            return err("n_samples, m, u and d must be positive".into());
        }
        if !(self.corrupt_fraction > 0.0 && self.corrupt_fraction < 1.0) {
            return err(format!(
                "corrupt_fraction must be in (0, 1), got {}",
                self.corrupt_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return err(format!(
                "noise_sigma must be a finite non-negative number, got {}",
                self.noise_sigma
            ));
        }
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return err(format!(
                "class_mix must be non-negative and sum to 1, got {:?}",
                self.class_mix
            ));
        }
        Ok(())
    }

    /// Exact per-type counts: floors of `n·p`, leftovers to the largest
    /// fractional parts (ties to the lower type code).
    pub fn type_counts(&self) -> [usize; 4] {
        let quotas: Vec<f64> = self
            .class_mix
            .iter()
            .map(|p| p * self.n_samples as f64)
            .collect();
        let mut counts = [0usize; 4];
        for (c, q) in counts.iter_mut().zip(&quotas) {
            *c = q.floor() as usize;
        }
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut left = self.n_samples - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if self.class_mix[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        counts
    }
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| f32_round(x / norm)).collect();
        }
    }
}

fn other_topic(rng: &mut ChaCha8Rng, n_topics: usize, not: usize) -> usize {
    let t = rng.random_range(0..n_topics - 1);
    if t >= not {
        t + 1
    } else {
        t
    }
}

/// Rows of `topics[row_topic[i]] + σ·ε`, with `n_rows - valid` zero rows
/// appended.
fn embed_rows(
    rng: &mut ChaCha8Rng,
    topics: &[Vec<f64>],
    row_topic: &[usize],
    total: usize,
    sigma: f64,
) -> Vec<f64> {
    let d = topics[0].len();
    let mut out = vec![0.0; total * d];
    for (r, &t) in row_topic.iter().enumerate() {
        for c in 0..d {
            let noise: f64 = StandardNormal.sample(rng);
            out[r * d + c] = f32_round(topics[t][c] + sigma * noise);
        }
    }
    out
}

fn summary(rng: &mut ChaCha8Rng, rows: &[f64], n_valid: usize, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let mean = (0..n_valid).map(|r| rows[r * d + c]).sum::<f64>() / n_valid as f64;
            let noise: f64 = StandardNormal.sample(rng);
            f32_round(mean + sigma * noise)
        })
        .collect()
}

/// Deterministic under `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<NewsSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topics: Vec<Vec<f64>> = (0..spec.n_topics)
        .map(|_| unit_vector(&mut rng, spec.d))
        .collect();

    let mut kinds: Vec<FakeType> = spec
        .type_counts()
        .iter()
        .zip(FakeType::KNOWN)
        .flat_map(|(&n, t)| std::iter::repeat_n(t, n))
        .collect();
    kinds.shuffle(&mut rng);

    let (m, u, d, sigma) = (spec.m, spec.u, spec.d, spec.noise_sigma);
    let min_len = m.div_ceil(2).max(1);
    let mut out = Vec::with_capacity(spec.n_samples);
    for kind in kinds {
        let topic = rng.random_range(0..spec.n_topics);
        let n_valid = rng.random_range(min_len..=m);
        let mut text_topic = vec![topic; n_valid];
        let mut image_topic = vec![topic; u];
        match kind {
            FakeType::Mismatched => {
                image_topic.fill(other_topic(&mut rng, spec.n_topics, topic));
            }
            FakeType::FabricatedText => {
                let foreign = other_topic(&mut rng, spec.n_topics, topic);
                let k = ((spec.corrupt_fraction * n_valid as f64).ceil() as usize).min(n_valid);
                for i in sample_indices(&mut rng, n_valid, k) {
                    text_topic[i] = foreign;
                }
            }
            FakeType::FabricatedImage => {
                let foreign = other_topic(&mut rng, spec.n_topics, topic);
                let k = ((spec.corrupt_fraction * u as f64).ceil() as usize).min(u);
                for i in sample_indices(&mut rng, u, k) {
                    image_topic[i] = foreign;
                }
            }
            FakeType::Real | FakeType::Unknown => {}
        }
        let text = embed_rows(&mut rng, &topics, &text_topic, m, sigma);
        let text_cls = summary(&mut rng, &text, n_valid, d, sigma);
        let image = embed_rows(&mut rng, &topics, &image_topic, u, sigma);
        let image_cls = summary(&mut rng, &image, u, d, sigma);
        out.push(NewsSample {
            text_tokens: Tensor::matrix(m, d, text)?,
            text_cls: Tensor::vector(text_cls)?,
            text_mask: (0..m).map(|i| i < n_valid).collect(),
            image_patches: Tensor::matrix(u, d, image)?,
            image_cls: Tensor::vector(image_cls)?,
            label: kind.label().expect("synthetic types carry labels"),
            fake_type: kind,
        });
    }
    Ok(out)
}
