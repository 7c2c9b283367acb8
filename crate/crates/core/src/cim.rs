//! Cross-modal interaction: each modality attends over the other, with an
//! inverse-attention branch gated into every head.

use crate::attention::{
    multi_head_attention, transformer_block, BlockParams, HeadTrace, MhaParams, MultiHeadConfig,
};
use crate::error::Result;
use crate::model::init::ParamSpec;
use crate::numerics::{Session, Tape, Tensor, Var};

pub const TEXT_TO_IMAGE: &str = "cim.t2o";
pub const IMAGE_TO_TEXT: &str = "cim.o2t";

#[derive(Debug, Clone)]
pub struct CoAttention {
    pub enriched: Var,
    /// Head traces per layer.
    pub layers: Vec<Vec<HeadTrace>>,
}

impl CoAttention {
    /// Head-averaged attention map of the last layer (still row-stochastic).
    pub fn weights(&self, tape: &Tape) -> Option<Tensor> {
        head_mean(tape, self.layers.last()?, |h| Some(h.attention.weights))
    }

    pub fn inverse_weights(&self, tape: &Tape) -> Option<Tensor> {
        head_mean(tape, self.layers.last()?, |h| h.inverse.map(|i| i.weights))
    }
}

fn head_mean(
    tape: &Tape,
    heads: &[HeadTrace],
    pick: impl Fn(&HeadTrace) -> Option<Var>,
) -> Option<Tensor> {
    let vars: Vec<_> = heads.iter().map(pick).collect::<Option<_>>()?;
    let first = tape.value(*vars.first()?);
    let mut acc = vec![0.0; first.len()];
    for v in &vars {
        for (a, x) in acc.iter_mut().zip(tape.value(*v).data()) {
            *a += x;
        }
    }
    let n = vars.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new(first.shape().to_vec(), acc).ok()
}

#[derive(Debug, Clone)]
pub struct CimOutput {
    /// Text queries over image keys: `m×d`.
    pub text: CoAttention,
    /// Image queries over text keys: `u×d`.
    pub image: CoAttention,
}

/// Queries from `target`, keys and values from `source`; `n_layers` rounds
/// of attention plus residual block, the source held fixed.
#[allow(clippy::too_many_arguments)]
pub fn co_attend(
    s: &mut Session,
    target: Var,
    source: Var,
    source_mask: Option<&[bool]>,
    cfg: &MultiHeadConfig,
    prefix: &str,
    with_inverse: bool,
    a_value: f64,
) -> Result<CoAttention> {
    let mut x = target;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let lp = format!("{prefix}.layer{l}");
        let mha = MhaParams::bind(s, &lp, cfg.n_heads, with_inverse)?;
        let block = BlockParams::bind(s, &format!("{lp}.ffn"))?;
        let att = multi_head_attention(
            &mut s.tape,
            x,
            source,
            &mha,
            source_mask,
            with_inverse,
            a_value,
        )?;
        x = transformer_block(&mut s.tape, x, att.output, &block)?;
        layers.push(att.heads);
    }
    Ok(CoAttention {
        enriched: x,
        layers,
    })
}

/// Both directions. Only text carries padding, so only image-queries-text
/// attention is masked.
pub fn cim_forward(
    s: &mut Session,
    text: Var,
    image: Var,
    text_mask: Option<&[bool]>,
    cfg: &MultiHeadConfig,
    with_inverse: bool,
    a_value: f64,
) -> Result<CimOutput> {
    let t = co_attend(
        s,
        text,
        image,
        None,
        cfg,
        TEXT_TO_IMAGE,
        with_inverse,
        a_value,
    )?;
    let o = co_attend(
        s,
        image,
        text,
        text_mask,
        cfg,
        IMAGE_TO_TEXT,
        with_inverse,
        a_value,
    )?;
    Ok(CimOutput { text: t, image: o })
}

pub fn cim_specs(cfg: &MultiHeadConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for prefix in [TEXT_TO_IMAGE, IMAGE_TO_TEXT] {
        for l in 0..cfg.n_layers {
            let lp = format!("{prefix}.layer{l}");
            out.extend(MhaParams::specs(&lp, cfg));
            out.extend(BlockParams::specs(&format!("{lp}.ffn"), cfg.d_model));
        }
    }
    out
}
