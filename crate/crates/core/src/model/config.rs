use std::fmt;
use std::str::FromStr;

use crate::attention::MultiHeadConfig;
use crate::error::{Error, Result};

/// Blocks switched off for an ablation run. `true` means disabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Drop the local-to-global block entirely.
    pub intra_lg: bool,
    /// Drop inverse attention inside local-to-global.
    pub intra_lg_ic: bool,
    /// Drop inverse attention inside local-to-local.
    pub intra_ll_ic: bool,
    /// Drop inverse attention inside cross-modal co-attention.
    pub inter_ic: bool,
}

impl Ablation {
    pub const KEYS: [&'static str; 4] = ["intra_lg", "intra_lg_ic", "intra_ll_ic", "inter_ic"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_full(&self) -> bool {
        *self == Self::default()
    }

    /// Parses a comma list such as `intra_lg,inter_ic`. Empty means none.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut a = Self::default();
        for key in s.split(',').map(str::trim).filter(|k| !k.is_empty()) {
            match key {
                "intra_lg" => a.intra_lg = true,
                "intra_lg_ic" => a.intra_lg_ic = true,
                "intra_ll_ic" => a.intra_ll_ic = true,
                "inter_ic" => a.inter_ic = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation `{other}` (expected one of {:?})",
                        Self::KEYS
                    )))
                }
            }
        }
        Ok(a)
    }

    pub fn keys(&self) -> Vec<&'static str> {
        let flags = [
            self.intra_lg,
            self.intra_lg_ic,
            self.intra_ll_ic,
            self.inter_ic,
        ];
        Self::KEYS
            .iter()
            .zip(flags)
            .filter_map(|(k, on)| on.then_some(*k))
            .collect()
    }

    /// Row label in the ablation table: `MIAN` for the full model.
    pub fn variant_name(&self) -> String {
        if self.is_full() {
            return "MIAN".into();
        }
        self.keys()
            .iter()
            .map(|k| format!("w/o {}", k.replace('_', "-")))
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse_list(s)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.keys().join(","))
    }
}

/// The five rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoIntraLg,
    NoIntraLgIc,
    NoIntraLlIc,
    NoInterIc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoIntraLg,
        Variant::NoIntraLgIc,
        Variant::NoIntraLlIc,
        Variant::NoInterIc,
    ];

    pub fn ablation(self) -> Ablation {
        let mut a = Ablation::none();
        match self {
            Variant::Full => {}
            Variant::NoIntraLg => a.intra_lg = true,
            Variant::NoIntraLgIc => a.intra_lg_ic = true,
            Variant::NoIntraLlIc => a.intra_ll_ic = true,
            Variant::NoInterIc => a.inter_ic = true,
        }
        a
    }

    pub fn name(self) -> String {
        self.ablation().variant_name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Text positions.
    pub m: usize,
    /// Image patches.
    pub u: usize,
    pub classifier_hidden: usize,
    pub ablation: Ablation,
    /// Scalar of the inverse-attention matrix. Any constant gives the same
    /// result.
    pub a_value: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// BERT/ViT-base sized setup: 196 text positions, 14×14 patches,
    /// 2 layers of 12 heads.
    pub fn full_scale() -> Self {
        Self {
            d_model: 768,
            n_heads: 12,
            n_layers: 2,
            m: 196,
            u: 196,
            classifier_hidden: 768,
            ablation: Ablation::none(),
            a_value: 1.0,
            seed: 0,
        }
    }

    /// Small enough to train on synthetic embeddings in minutes on one core.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_layers: 1,
            m: 16,
            u: 16,
            classifier_hidden: 32,
            ablation: Ablation::none(),
            a_value: 1.0,
            seed: 0,
        }
    }

    /// Gradient-check size.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            m: 4,
            u: 4,
            classifier_hidden: 8,
            ablation: Ablation::none(),
            a_value: 1.0,
            seed: 0,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn attention(&self) -> MultiHeadConfig {
        MultiHeadConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.m == 0 || self.u == 0 {
            return Err(Error::Config("m and u must be at least 1".into()));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_model must be even for positional encoding, got {}",
                self.d_model
            )));
        }
        if self.classifier_hidden == 0 {
            return Err(Error::Config("classifier_hidden must be at least 1".into()));
        }
        if !self.a_value.is_finite() {
            return Err(Error::Config("a_value must be finite".into()));
        }
        Ok(())
    }

    /// 64-bit FNV-1a over the fields that determine parameter shapes.
    pub fn fingerprint(&self) -> u64 {
        let key = format!(
            "mian;d_model={};n_heads={};n_layers={};classifier_hidden={}",
            self.d_model, self.n_heads, self.n_layers, self.classifier_hidden
        );
        key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
