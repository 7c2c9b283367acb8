//! Hierarchical learning: per-modality local-to-local self-attention and
//! global-guided local-to-global weighting, fused into one sequence.

use crate::attention::{
    gate_combine, inverse_weights, multi_head_attention, transformer_block, BlockParams,
    GateParams, HeadTrace, MhaParams, MultiHeadConfig,
};
use crate::error::{Error, Result};
use crate::model::init::{Init, ParamSpec};
use crate::numerics::{Session, Tape, Tensor, Var};

/// One modality's token sequence on a tape. `mask[i]` is `true` for a valid
/// position; image sequences are fully valid.
#[derive(Debug, Clone)]
pub struct ModalitySequence {
    /// `n×d`.
    pub tokens: Var,
    /// `1×d` encoder summary vector.
    pub cls: Var,
    pub mask: Vec<bool>,
}

impl ModalitySequence {
    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `None` when every position is valid, so kernels skip masking.
    pub fn key_mask(&self) -> Option<&[bool]> {
        if self.mask.iter().all(|&m| m) {
            None
        } else {
            Some(&self.mask)
        }
    }
}

/// Which parts of a hierarchical branch are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HlmFlags {
    pub local_to_global: bool,
    pub ll_inverse: bool,
    pub lg_inverse: bool,
}

impl Default for HlmFlags {
    fn default() -> Self {
        Self {
            local_to_global: true,
            ll_inverse: true,
            lg_inverse: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalToGlobal {
    /// `1×n`, sums to one over valid positions.
    pub weights: Var,
    pub inv_weights: Option<Var>,
    /// `n×d` reweighted locals, gated with the inverse branch when present.
    pub tokens: Var,
    /// `1×d` column sum of `tokens` (equals `weights·X` without inverse).
    pub pooled: Var,
}

#[derive(Debug, Clone)]
pub struct HlmOutput {
    /// `n×d` fused hierarchical sequence.
    pub seq: Var,
    /// `n×d` local-to-local output.
    pub ll: Var,
    /// Head traces per local-to-local layer.
    pub ll_layers: Vec<Vec<HeadTrace>>,
    pub lg: Option<LocalToGlobal>,
}

/// `1×n` row with `1/n_valid` on valid positions and zero elsewhere.
pub(crate) fn masked_mean(tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(Error::FullyMasked { row: 0 });
    }
    if tape.shape(x)[0] != mask.len() {
        return Err(Error::shape("masked_mean", tape.shape(x), &[mask.len()]));
    }
    let w: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / n_valid as f64 } else { 0.0 })
        .collect();
    let w = tape.constant(Tensor::matrix(1, mask.len(), w)?);
    tape.matmul(w, x)
}

pub fn l2l_prefix(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l2l.layer{layer}")
}

/// Stacked self-attention rounds, each followed by the residual block.
/// Zero layers returns the tokens unchanged.
pub fn local_to_local(
    s: &mut Session,
    seq: &ModalitySequence,
    cfg: &MultiHeadConfig,
    prefix: &str,
    with_inverse: bool,
    a_value: f64,
) -> Result<(Var, Vec<Vec<HeadTrace>>)> {
    let mut x = seq.tokens;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let lp = l2l_prefix(prefix, l);
        let mha = MhaParams::bind(s, &lp, cfg.n_heads, with_inverse)?;
        let block = BlockParams::bind(s, &format!("{lp}.ffn"))?;
        let att = multi_head_attention(
            &mut s.tape,
            x,
            x,
            &mha,
            seq.key_mask(),
            with_inverse,
            a_value,
        )?;
        x = transformer_block(&mut s.tape, x, att.output, &block)?;
        layers.push(att.heads);
    }
    Ok((x, layers))
}

/// `[mean of valid tokens, cls]`, shape `1×2d`.
pub fn global_feature(tape: &mut Tape, seq: &ModalitySequence) -> Result<Var> {
    let mean = masked_mean(tape, seq.tokens, &seq.mask)?;
    tape.concat_last_dim(mean, seq.cls)
}

/// Global-guided weighting of local tokens:
/// `h = tanh((X·W¹) ⊙ tanh(g·W²))`, `weights = softmax(h·W³)` over valid
/// positions, tokens rescaled row by row.
pub fn local_to_global(
    s: &mut Session,
    seq: &ModalitySequence,
    g: Var,
    prefix: &str,
    with_inverse: bool,
    a_value: f64,
) -> Result<LocalToGlobal> {
    let lp = format!("{prefix}.l2g");
    let w1 = s.param(&format!("{lp}.W1"))?;
    let w2 = s.param(&format!("{lp}.W2"))?;
    let w3 = s.param(&format!("{lp}.W3"))?;
    let gate = if with_inverse {
        Some(GateParams::bind(s, &format!("{lp}.gate"))?)
    } else {
        None
    };
    let t = &mut s.tape;
    let local = t.matmul(seq.tokens, w1)?;
    let guide = t.matmul(g, w2)?;
    let guide = t.tanh(guide);
    let h = t.mul(local, guide)?;
    let h = t.tanh(h);
    let raw = t.matmul(h, w3)?;
    let raw = t.transpose(raw)?;
    let weights = t.softmax_rows(raw, seq.key_mask())?;
    let cons = t.scale_rows(seq.tokens, weights)?;
    let (tokens, inv_weights) = match gate {
        Some(gate) => {
            let inv = inverse_weights(t, weights, seq.key_mask(), a_value)?;
            let incons = t.scale_rows(seq.tokens, inv)?;
            (gate_combine(t, cons, incons, &gate)?, Some(inv))
        }
        None => (cons, None),
    };
    let n = t.shape(tokens)[0];
    let ones = t.constant(Tensor::filled(&[1, n], 1.0));
    let pooled = t.matmul(ones, tokens)?;
    Ok(LocalToGlobal {
        weights,
        inv_weights,
        tokens,
        pooled,
    })
}

/// Full branch: masked rows are zeroed on entry, then
/// `seq = [ll, lg_tokens]·W_fuse` (or `ll` alone without local-to-global).
pub fn hlm_forward(
    s: &mut Session,
    seq: &ModalitySequence,
    cfg: &MultiHeadConfig,
    prefix: &str,
    flags: HlmFlags,
    a_value: f64,
) -> Result<HlmOutput> {
    let mut seq = seq.clone();
    if seq.key_mask().is_some() {
        let keep: Vec<f64> = seq
            .mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        let keep = s.tape.constant(Tensor::vector(keep)?);
        seq.tokens = s.tape.scale_rows(seq.tokens, keep)?;
    }
    let (ll, ll_layers) = local_to_local(s, &seq, cfg, prefix, flags.ll_inverse, a_value)?;
    if !flags.local_to_global {
        return Ok(HlmOutput {
            seq: ll,
            ll,
            ll_layers,
            lg: None,
        });
    }
    let g = global_feature(&mut s.tape, &seq)?;
    let lg = local_to_global(s, &seq, g, prefix, flags.lg_inverse, a_value)?;
    let w_fuse = s.param(&format!("{prefix}.Wfuse"))?;
    let cat = s.tape.concat_last_dim(ll, lg.tokens)?;
    let fused = s.tape.matmul(cat, w_fuse)?;
    Ok(HlmOutput {
        seq: fused,
        ll,
        ll_layers,
        lg: Some(lg),
    })
}

pub fn hlm_specs(prefix: &str, cfg: &MultiHeadConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    for l in 0..cfg.n_layers {
        let lp = l2l_prefix(prefix, l);
        out.extend(MhaParams::specs(&lp, cfg));
        out.extend(BlockParams::specs(&format!("{lp}.ffn"), d));
    }
    out.push(ParamSpec::new(
        format!("{prefix}.l2g.W1"),
        &[d, d],
        Init::Xavier,
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.l2g.W2"),
        &[2 * d, d],
        Init::Xavier,
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.l2g.W3"),
        &[d, 1],
        Init::Xavier,
    ));
    out.extend(GateParams::specs(&format!("{prefix}.l2g.gate"), d));
    out.push(ParamSpec::new(
        format!("{prefix}.Wfuse"),
        &[2 * d, d],
        Init::Xavier,
    ));
    out
}
