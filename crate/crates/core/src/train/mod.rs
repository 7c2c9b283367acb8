//! Optimization loop, step learning-rate schedule, metrics and the
//! ablation driver.

mod ablation;
mod metrics;
mod optim;

pub use ablation::{ablation_row, run_ablation_suite, AblationRow, AblationTable};
pub use metrics::{ClassMetrics, MetricsReport};
pub use optim::{Optimizer, OptimizerKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::NewsSample;
use crate::error::{Error, Result};
use crate::model::{forward, loss, predict_label, sample_loss, ModelConfig};
use crate::numerics::{Gradients, ModelParams, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub optimizer: OptimizerKind,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl TrainConfig {
    /// Adam at `1e-3`, halved every 20 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr0: 1e-3,
            optimizer: OptimizerKind::adam(),
            step_size: 20,
            gamma: 0.5,
            seed: 0,
            threshold: 0.5,
        }
    }

    /// Fine-tuning rate for large pretrained encoders.
    pub fn fine_tune() -> Self {
        Self {
            lr0: 2e-6,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return err(format!(
                "lr0 must be a finite non-negative number, got {}",
                self.lr0
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.step_size == 0 || self.batch_size == 0 {
            return err("step_size and batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return err(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// `lr0 · gamma^⌊epoch / step_size⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.step_size.max(1)) as i32;
    cfg.lr0 * cfg.gamma.powi(k)
}

/// Mean loss and mean gradient over `batch`, plus each sample's `ŷ`.
///
/// Samples run in parallel; their gradients are summed in `batch` order so
/// the result does not depend on scheduling.
pub fn batch_gradients(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &[&NewsSample],
) -> Result<(f64, Gradients, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let per_sample: Vec<(f64, Gradients, f64)> = batch
        .par_iter()
        .map(|sample| {
            let mut s = Session::new(params);
            let (l, y_hat) = sample_loss(&mut s, sample, cfg)?;
            let lv = s.tape.value(l).data()[0];
            let yv = s.tape.value(y_hat).data()[0];
            s.tape.backward(l)?;
            Ok((lv, s.gradients(), yv))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    let mut y_hats = Vec::with_capacity(batch.len());
    for (l, g, y) in &per_sample {
        loss_sum += l;
        total.accumulate(g);
        y_hats.push(*y);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss_sum / n, total, y_hats))
}

/// Predicted probabilities of the real class, in sample order.
pub fn predict_all(
    cfg: &ModelConfig,
    params: &ModelParams,
    samples: &[NewsSample],
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| forward(s, cfg, params).map(|p| p.y_hat))
        .collect()
}

pub fn evaluate(
    cfg: &ModelConfig,
    params: &ModelParams,
    samples: &[NewsSample],
    threshold: f64,
    split: &str,
) -> Result<MetricsReport> {
    let y_hat = predict_all(cfg, params, samples)?;
    score(
        samples,
        &y_hat,
        threshold,
        split,
        &cfg.ablation.variant_name(),
        None,
    )
}

fn score(
    samples: &[NewsSample],
    y_hat: &[f64],
    threshold: f64,
    split: &str,
    variant: &str,
    epoch: Option<usize>,
) -> Result<MetricsReport> {
    let labels: Vec<u8> = y_hat.iter().map(|&p| predict_label(p, threshold)).collect();
    let mean_loss = samples
        .iter()
        .zip(y_hat)
        .map(|(s, &p)| loss(p, s.label))
        .sum::<f64>()
        / samples.len().max(1) as f64;
    MetricsReport::from_predictions(samples, &labels, mean_loss, split, variant, epoch)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Per epoch: the train report, then the test report when a test set
    /// was given.
    pub history: Vec<MetricsReport>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn last_test(&self) -> Option<&MetricsReport> {
        self.history.iter().rev().find(|r| r.split == "test")
    }
}

/// Trains `params` in place of a copy and records metrics every epoch.
///
/// Train metrics use the predictions made while each batch was being
/// fitted; test metrics use the parameters at the end of the epoch. A
/// non-finite loss or gradient stops training with [`Error::Divergence`].
pub fn train(
    cfg: &ModelConfig,
    params: ModelParams,
    train_set: &[NewsSample],
    test_set: &[NewsSample],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(cfg, params, train_set, test_set, tc, |_| {})
}

/// [`train`] with a callback after every epoch's reports are recorded.
pub fn train_with(
    cfg: &ModelConfig,
    mut params: ModelParams,
    train_set: &[NewsSample],
    test_set: &[NewsSample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&[MetricsReport]),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let variant = cfg.ablation.variant_name();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = Optimizer::new(tc.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut step_losses = Vec::new();

    for epoch in 0..tc.epochs {
        let lr = lr_at(epoch, tc);
        order.shuffle(&mut rng);
        let mut y_hat = vec![0.0; train_set.len()];
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let batch: Vec<&NewsSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (l, grads, preds) = batch_gradients(cfg, &params, &batch)?;
            if !l.is_finite() || grads.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: l,
                });
            }
            opt.step(&mut params, &grads, lr);
            step_losses.push(l);
            for (&i, p) in idx.iter().zip(preds) {
                y_hat[i] = p;
            }
        }
        let start = history.len();
        history.push(score(
            train_set,
            &y_hat,
            tc.threshold,
            "train",
            &variant,
            Some(epoch),
        )?);
        if !test_set.is_empty() {
            let probs = predict_all(cfg, &params, test_set)?;
            history.push(score(
                test_set,
                &probs,
                tc.threshold,
                "test",
                &variant,
                Some(epoch),
            )?);
        }
        on_epoch(&history[start..]);
    }
    Ok(TrainOutcome {
        params,
        history,
        step_losses,
    })
}
