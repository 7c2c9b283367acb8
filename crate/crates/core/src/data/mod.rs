//! News samples as embedding sequences, the synthetic generator and the
//! stratified train/test split.

mod format;
mod synth;

pub use format::{
    decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, MAGIC, VERSION,
};
pub use synth::{generate, SynthSpec};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const LABEL_FAKE: u8 = 0;
pub const LABEL_REAL: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FakeType {
    Real = 0,
    FabricatedText = 1,
    FabricatedImage = 2,
    Mismatched = 3,
    Unknown = 255,
}

impl FakeType {
    pub const KNOWN: [FakeType; 4] = [
        FakeType::Real,
        FakeType::FabricatedText,
        FakeType::FabricatedImage,
        FakeType::Mismatched,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FakeType::Real,
            1 => FakeType::FabricatedText,
            2 => FakeType::FabricatedImage,
            3 => FakeType::Mismatched,
            255 => FakeType::Unknown,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            FakeType::Real => "real",
            FakeType::FabricatedText => "fabricated_text",
            FakeType::FabricatedImage => "fabricated_image",
            FakeType::Mismatched => "mismatched",
            FakeType::Unknown => "unknown",
        }
    }

    /// Label implied by the type, if any.
    pub fn label(self) -> Option<u8> {
        match self {
            FakeType::Real => Some(LABEL_REAL),
            FakeType::Unknown => None,
            _ => Some(LABEL_FAKE),
        }
    }
}

/// One news item as encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsSample {
    /// `m×d`; rows with `text_mask == false` are zero.
    pub text_tokens: Tensor,
    /// `[d]`.
    pub text_cls: Tensor,
    pub text_mask: Vec<bool>,
    /// `u×d`.
    pub image_patches: Tensor,
    /// `[d]`.
    pub image_cls: Tensor,
    pub label: u8,
    pub fake_type: FakeType,
}

impl NewsSample {
    pub fn m(&self) -> usize {
        self.text_tokens.rows()
    }

    pub fn u(&self) -> usize {
        self.image_patches.rows()
    }

    pub fn d(&self) -> usize {
        self.text_tokens.cols()
    }

    pub fn n_valid_text(&self) -> usize {
        self.text_mask.iter().filter(|&&m| m).count()
    }

    /// `true` when the valid text positions form a prefix, as the file
    /// format requires.
    pub fn mask_is_prefix(&self) -> bool {
        let n = self.n_valid_text();
        self.text_mask
            .iter()
            .enumerate()
            .all(|(i, &m)| m == (i < n))
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = (self.m(), self.d());
        let bad = |what: &str| Err(Error::Data(what.to_string()));
        if self.text_tokens.rank() != 2 || self.image_patches.rank() != 2 {
            return bad("token and patch tensors must be matrices");
        }
        if self.image_patches.cols() != d || self.text_cls.len() != d || self.image_cls.len() != d {
            return bad("inconsistent embedding dimension");
        }
        if self.text_mask.len() != m {
            return bad("text mask length differs from token count");
        }
        if self.n_valid_text() == 0 {
            return bad("text has no valid tokens");
        }
        if self.label > 1 {
            return bad("label must be 0 (fake) or 1 (real)");
        }
        if let Some(l) = self.fake_type.label() {
            if l != self.label {
                return bad("label disagrees with fake type");
            }
        }
        for (r, &valid) in self.text_mask.iter().enumerate() {
            if !valid && self.text_tokens.row(r).iter().any(|&x| x != 0.0) {
                return bad("masked text row is not zero");
            }
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: &Tensor, b: &Tensor| {
            a.shape() == b.shape()
                && a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        self.label == other.label
            && self.fake_type == other.fake_type
            && self.text_mask == other.text_mask
            && same(&self.text_tokens, &other.text_tokens)
            && same(&self.text_cls, &other.text_cls)
            && same(&self.image_patches, &other.image_patches)
            && same(&self.image_cls, &other.image_cls)
    }
}

/// Stratified split by fake type. Returns ascending index lists
/// `(train, test)` that are disjoint and cover every sample.
///
/// The overall train size is `round(n · train_fraction)`; each type gets
/// the floor of its proportional share and leftover slots go to the types
/// with the largest fractional parts.
pub fn split_indices(
    samples: &[NewsSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut groups: BTreeMap<FakeType, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.fake_type).or_default().push(i);
    }
    if let Some((t, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::Data(format!(
            "fake type {} has {} sample(s); stratified split needs at least 2",
            t.name(),
            g.len()
        )));
    }
    let total = (samples.len() as f64 * train_fraction).round() as usize;
    let quotas: Vec<f64> = groups
        .values()
        .map(|g| g.len() as f64 * train_fraction)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &g in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[g] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (group, &k) in groups.values().zip(&counts) {
        let mut idx = group.clone();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(
    samples: &[NewsSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<NewsSample>, Vec<NewsSample>)> {
    let (tr, te) = split_indices(samples, train_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&tr), pick(&te)))
}

/// Sample count per fake type.
pub fn type_counts(samples: &[NewsSample]) -> BTreeMap<FakeType, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.fake_type).or_insert(0) += 1;
    }
    out
}
