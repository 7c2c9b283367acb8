//! Full network: positional encoding, a hierarchical branch per modality,
//! cross-modal interaction, pooled news representation and the classifier.

mod checkpoint;
mod config;
pub mod init;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint,
    CKPT_MAGIC, CKPT_VERSION,
};
pub use config::{Ablation, ModelConfig, Variant};

use crate::attention::positional_encoding;
use crate::cim::{cim_forward, cim_specs, CimOutput};
use crate::data::NewsSample;
use crate::error::{Error, Result};
use crate::hlm::{hlm_forward, hlm_specs, masked_mean, HlmFlags, HlmOutput, ModalitySequence};
use crate::numerics::{sigmoid, ModelParams, Session, Tensor, Var, PROB_CLAMP};
use init::{init_params, Init, ParamSpec};

pub const TEXT_PREFIX: &str = "hlm.text";
pub const IMAGE_PREFIX: &str = "hlm.image";

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `sigmoid(logit)`, probability of the *real* class.
    pub y_hat: f64,
    pub logit: f64,
    /// `1×4d` news representation fed to the classifier.
    pub r_n: Tensor,
}

/// Everything a forward pass recorded, for loss construction and
/// inspection.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub y_hat: Var,
    pub logit: Var,
    pub r_n: Var,
    pub text: HlmOutput,
    pub image: HlmOutput,
    pub cim: CimOutput,
    pub text_mask: Vec<bool>,
}

/// Every learnable tensor of a model with this configuration, in
/// initialization order. Ablations never change the set.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let att = cfg.attention();
    let (d, h) = (cfg.d_model, cfg.classifier_hidden);
    let mut out = hlm_specs(TEXT_PREFIX, &att);
    out.extend(hlm_specs(IMAGE_PREFIX, &att));
    out.extend(cim_specs(&att));
    out.push(ParamSpec::new("clf.W1", &[4 * d, h], Init::Xavier));
    out.push(ParamSpec::new("clf.b1", &[h], Init::Zeros));
    out.push(ParamSpec::new("clf.W2", &[h, 1], Init::Xavier));
    out.push(ParamSpec::new("clf.b2", &[1], Init::Zeros));
    out
}

pub fn init_model(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    init_params(&param_specs(cfg), cfg.seed)
}

/// Checks that `params` has exactly the paths and shapes `cfg` implies.
pub fn check_params(cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::Config(format!(
            "configuration implies {} parameters, found {}",
            specs.len(),
            params.len()
        )));
    }
    for s in &specs {
        let t = params.get(&s.path)?;
        if t.shape() != s.shape.as_slice() {
            return Err(Error::shape("parameter", &s.shape, t.shape()));
        }
    }
    Ok(())
}

fn check_sample(cfg: &ModelConfig, sample: &NewsSample) -> Result<()> {
    let got = [sample.m(), sample.u(), sample.d()];
    let want = [cfg.m, cfg.u, cfg.d_model];
    if got != want {
        return Err(Error::shape("sample (m, u, d)", &want, &got));
    }
    if sample.text_mask.len() != cfg.m {
        return Err(Error::shape(
            "text mask",
            &[cfg.m],
            &[sample.text_mask.len()],
        ));
    }
    Ok(())
}

fn sequence(
    s: &mut Session,
    tokens: &Tensor,
    cls: &Tensor,
    mask: Vec<bool>,
) -> Result<ModalitySequence> {
    let pe = positional_encoding(tokens.rows(), tokens.cols())?;
    let x = s.tape.constant(tokens.clone());
    let pe = s.tape.constant(pe);
    let tokens = s.tape.add(x, pe)?;
    let cls = s.tape.constant(cls.clone().reshape(vec![1, cls.len()])?);
    Ok(ModalitySequence { tokens, cls, mask })
}

/// Records the forward pass of one sample on `s`.
pub fn forward_graph(
    s: &mut Session,
    sample: &NewsSample,
    cfg: &ModelConfig,
) -> Result<ForwardGraph> {
    check_sample(cfg, sample)?;
    let att = cfg.attention();
    let a = cfg.ablation;
    let flags = HlmFlags {
        local_to_global: !a.intra_lg,
        ll_inverse: !a.intra_ll_ic,
        lg_inverse: !a.intra_lg_ic,
    };

    let text_seq = sequence(
        s,
        &sample.text_tokens,
        &sample.text_cls,
        sample.text_mask.clone(),
    )?;
    let image_seq = sequence(
        s,
        &sample.image_patches,
        &sample.image_cls,
        vec![true; sample.u()],
    )?;
    let text = hlm_forward(s, &text_seq, &att, TEXT_PREFIX, flags, cfg.a_value)?;
    let image = hlm_forward(s, &image_seq, &att, IMAGE_PREFIX, flags, cfg.a_value)?;

    let text_mask = text_seq.key_mask().map(<[bool]>::to_vec);
    let cim = cim_forward(
        s,
        text.seq,
        image.seq,
        text_mask.as_deref(),
        &att,
        !a.inter_ic,
        cfg.a_value,
    )?;

    let all_image = vec![true; sample.u()];
    let t = &mut s.tape;
    let pooled = [
        masked_mean(t, text.seq, &sample.text_mask)?,
        masked_mean(t, image.seq, &all_image)?,
        masked_mean(t, cim.text.enriched, &sample.text_mask)?,
        masked_mean(t, cim.image.enriched, &all_image)?,
    ];
    let r_n = t.concat_cols(&pooled)?;

    let w1 = s.param("clf.W1")?;
    let b1 = s.param("clf.b1")?;
    let w2 = s.param("clf.W2")?;
    let b2 = s.param("clf.b2")?;
    let t = &mut s.tape;
    let hidden = t.matmul(r_n, w1)?;
    let hidden = t.add(hidden, b1)?;
    let hidden = t.relu(hidden);
    let logit = t.matmul(hidden, w2)?;
    let logit = t.add(logit, b2)?;
    let y_hat = t.sigmoid(logit);
    Ok(ForwardGraph {
        y_hat,
        logit,
        r_n,
        text,
        image,
        cim,
        text_mask: sample.text_mask.clone(),
    })
}

pub fn forward(sample: &NewsSample, cfg: &ModelConfig, params: &ModelParams) -> Result<Prediction> {
    let mut s = Session::forward_only(params);
    let g = forward_graph(&mut s, sample, cfg)?;
    Ok(Prediction {
        y_hat: s.tape.value(g.y_hat).data()[0],
        logit: s.tape.value(g.logit).data()[0],
        r_n: s.tape.value(g.r_n).clone(),
    })
}

/// Records forward plus cross-entropy against the sample's label; returns
/// `(loss, y_hat)`.
pub fn sample_loss(s: &mut Session, sample: &NewsSample, cfg: &ModelConfig) -> Result<(Var, Var)> {
    let g = forward_graph(s, sample, cfg)?;
    let l = s.tape.bce(g.y_hat, sample.label as f64)?;
    Ok((l, g.y_hat))
}

/// `−y·ln ŷ − (1−y)·ln(1−ŷ)` with `ŷ` clamped away from 0 and 1.
pub fn loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = y as f64;
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// `1` (real) iff `y_hat >= threshold`.
pub fn predict_label(y_hat: f64, threshold: f64) -> u8 {
    u8::from(y_hat >= threshold)
}

/// Probability from a logit, same formula as the graph uses.
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit)
}
