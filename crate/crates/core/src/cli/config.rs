//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Where training data comes from when no `--data` flag is given.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// A `MIANEMB1` file; when absent a synthetic set is generated.
    pub path: Option<PathBuf>,
    pub n_samples: usize,
    pub n_topics: usize,
    pub noise_sigma: f64,
    pub corrupt_fraction: f64,
    pub class_mix: [f64; 4],
    /// Seed of the synthetic generator.
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            path: None,
            n_samples: s.n_samples,
            n_topics: s.n_topics,
            noise_sigma: s.noise_sigma,
            corrupt_fraction: s.corrupt_fraction,
            class_mix: s.class_mix,
            seed: s.seed,
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Seeds model initialization, batch order and the train/test split.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            data: DataConfig::default(),
            seed: 0,
        }
    }
}

const KEYS: &[(&str, &str)] = &[
    ("model.d_model", "embedding width"),
    ("model.n_heads", "attention heads per layer"),
    ("model.n_layers", "attention layers per stack"),
    ("model.m", "text positions"),
    ("model.u", "image patches"),
    ("model.classifier_hidden", "classifier hidden width"),
    ("model.a_value", "inverse-attention constant"),
    ("train.epochs", "passes over the training split"),
    ("train.batch_size", "samples per optimizer step"),
    ("train.lr0", "initial learning rate"),
    ("train.optimizer", "adam or sgd"),
    ("train.step_size", "epochs between learning-rate decays"),
    ("train.gamma", "learning-rate decay factor"),
    (
        "train.threshold",
        "probability at or above which a sample is called real",
    ),
    ("data.path", "MIANEMB1 file; empty means synthesize"),
    ("data.n_samples", "synthetic sample count"),
    ("data.n_topics", "synthetic topic count"),
    ("data.noise_sigma", "synthetic noise scale"),
    (
        "data.corrupt_fraction",
        "share of rows replaced in fabricated samples",
    ),
    (
        "data.class_mix",
        "real, fabricated text, fabricated image, mismatched",
    ),
    ("data.seed", "synthetic generator seed"),
    (
        "data.train_fraction",
        "share of samples in the training split",
    ),
    ("seed", "model, batch order and split seed"),
    (
        "ablation",
        "comma list of intra_lg, intra_lg_ic, intra_ll_ic, inter_ic",
    ),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    /// Parses `text` over the defaults. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    no + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", no + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults, or the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "model.d_model" => m.d_model = parse(key, value)?,
            "model.n_heads" => m.n_heads = parse(key, value)?,
            "model.n_layers" => m.n_layers = parse(key, value)?,
            "model.m" => m.m = parse(key, value)?,
            "model.u" => m.u = parse(key, value)?,
            "model.classifier_hidden" => m.classifier_hidden = parse(key, value)?,
            "model.a_value" => m.a_value = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr0" => t.lr0 = parse(key, value)?,
            "train.optimizer" => t.optimizer = value.parse()?,
            "train.step_size" => t.step_size = parse(key, value)?,
            "train.gamma" => t.gamma = parse(key, value)?,
            "train.threshold" => t.threshold = parse(key, value)?,
            "data.path" => d.path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.n_samples" => d.n_samples = parse(key, value)?,
            "data.n_topics" => d.n_topics = parse(key, value)?,
            "data.noise_sigma" => d.noise_sigma = parse(key, value)?,
            "data.corrupt_fraction" => d.corrupt_fraction = parse(key, value)?,
            "data.class_mix" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                d.class_mix = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("`{key}` needs exactly four values")))?;
            }
            "data.seed" => d.seed = parse(key, value)?,
            "data.train_fraction" => d.train_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => m.ablation = value.parse()?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` (known keys: {})",
                    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
                )))
            }
        }
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth_spec().validate()?;
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must be in (0, 1), got {f}"
            )));
        }
        Ok(())
    }

    /// Synthetic data shaped for this model.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n_samples: self.data.n_samples,
            m: self.model.m,
            u: self.model.u,
            d: self.model.d_model,
            n_topics: self.data.n_topics,
            noise_sigma: self.data.noise_sigma,
            corrupt_fraction: self.data.corrupt_fraction,
            class_mix: self.data.class_mix,
            seed: self.data.seed,
        }
    }

    /// The configuration as a file that parses back to itself, one
    /// commented line per key.
    pub fn to_text(&self) -> String {
        let (m, t, d) = (&self.model, &self.train, &self.data);
        let mix = d.class_mix.map(|x| x.to_string()).join(",");
        let values = [
            m.d_model.to_string(),
            m.n_heads.to_string(),
            m.n_layers.to_string(),
            m.m.to_string(),
            m.u.to_string(),
            m.classifier_hidden.to_string(),
            m.a_value.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.lr0.to_string(),
            t.optimizer.to_string(),
            t.step_size.to_string(),
            t.gamma.to_string(),
            t.threshold.to_string(),
            d.path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            d.n_samples.to_string(),
            d.n_topics.to_string(),
            d.noise_sigma.to_string(),
            d.corrupt_fraction.to_string(),
            mix,
            d.seed.to_string(),
            d.train_fraction.to_string(),
            self.seed.to_string(),
            m.ablation.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, doc), v)| format!("# {doc}\n{k} = {v}\n"))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
