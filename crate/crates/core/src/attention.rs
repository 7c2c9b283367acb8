//! Attention primitives shared by the hierarchical and cross-modal modules.
//!
//! All kernels work on a [`Tape`] so they are differentiable end to end and
//! every weight matrix they produce stays inspectable. Matrices use the
//! row-vector convention: a sequence is `n×d`, a projection is `X·W`.

use crate::error::{Error, Result};
use crate::model::init::{Init, ParamSpec};
use crate::numerics::{Session, Tape, Tensor, Var};

/// Weights are checked to be row-stochastic to this tolerance before
/// inverse attention is applied to them.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-4;

/// A row-stochastic weight matrix and the values it attended over.
#[derive(Debug, Clone, Copy)]
pub struct AttentionResult {
    pub weights: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
}

impl MultiHeadConfig {
    pub fn new(d_model: usize, n_heads: usize, n_layers: usize) -> Result<Self> {
        let cfg = Self {
            d_model,
            n_heads,
            n_layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide d_model ({})",
                self.n_heads, self.d_model
            )));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Sigmoid gate merging a consistency and an inconsistency feature.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    /// `2d×d`, applied to `[r_cons, r_incons]`.
    pub w: Var,
    pub b: Var,
}

impl GateParams {
    pub fn bind(s: &mut Session, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: s.param(&format!("{prefix}.Wg"))?,
            b: s.param(&format!("{prefix}.bg"))?,
        })
    }

    pub fn specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}.Wg"), &[2 * d, d], Init::Xavier),
            ParamSpec::new(format!("{prefix}.bg"), &[d], Init::Zeros),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub gate: Option<GateParams>,
}

/// Projections for one multi-head attention site.
#[derive(Debug, Clone)]
pub struct MhaParams {
    pub heads: Vec<HeadParams>,
    pub w_cat: Var,
}

impl MhaParams {
    /// Gate parameters are bound only when `with_inverse`, so a disabled
    /// inverse branch leaves them untouched by backward.
    pub fn bind(s: &mut Session, prefix: &str, n_heads: usize, with_inverse: bool) -> Result<Self> {
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let hp = format!("{prefix}.head{h}");
            heads.push(HeadParams {
                wq: s.param(&format!("{hp}.Wq"))?,
                wk: s.param(&format!("{hp}.Wk"))?,
                wv: s.param(&format!("{hp}.Wv"))?,
                gate: if with_inverse {
                    Some(GateParams::bind(s, &format!("{hp}.gate"))?)
                } else {
                    None
                },
            });
        }
        Ok(Self {
            heads,
            w_cat: s.param(&format!("{prefix}.Wcat"))?,
        })
    }

    pub fn specs(prefix: &str, cfg: &MultiHeadConfig) -> Vec<ParamSpec> {
        let (d, dk) = (cfg.d_model, cfg.d_k());
        let mut out = Vec::new();
        for h in 0..cfg.n_heads {
            let hp = format!("{prefix}.head{h}");
            for w in ["Wq", "Wk", "Wv"] {
                out.push(ParamSpec::new(format!("{hp}.{w}"), &[d, dk], Init::Xavier));
            }
            out.extend(GateParams::specs(&format!("{hp}.gate"), dk));
        }
        out.push(ParamSpec::new(
            format!("{prefix}.Wcat"),
            &[d, d],
            Init::Xavier,
        ));
        out
    }
}

/// Residual, layer-norm and feedforward weights following an attention site.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub w_fc1: Var,
    pub w_fc2: Var,
    pub b: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

impl BlockParams {
    pub fn bind(s: &mut Session, prefix: &str) -> Result<Self> {
        let mut p = |name: &str| s.param(&format!("{prefix}.{name}"));
        Ok(Self {
            w_fc1: p("Wfc1")?,
            w_fc2: p("Wfc2")?,
            b: p("b")?,
            ln1_gain: p("ln1.gain")?,
            ln1_bias: p("ln1.bias")?,
            ln2_gain: p("ln2.gain")?,
            ln2_bias: p("ln2.bias")?,
        })
    }

    pub fn specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}.Wfc1"), &[d, d], Init::Xavier),
            ParamSpec::new(format!("{prefix}.Wfc2"), &[d, d], Init::Xavier),
            ParamSpec::new(format!("{prefix}.b"), &[d], Init::Zeros),
            ParamSpec::new(format!("{prefix}.ln1.gain"), &[d], Init::Ones),
            ParamSpec::new(format!("{prefix}.ln1.bias"), &[d], Init::Zeros),
            ParamSpec::new(format!("{prefix}.ln2.gain"), &[d], Init::Ones),
            ParamSpec::new(format!("{prefix}.ln2.bias"), &[d], Init::Zeros),
        ]
    }
}

/// `softmax(Q·Kᵀ/√d_k)` with masked keys forced to zero weight, then
/// `weights·V`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<AttentionResult> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::shape("scaled_dot_attention", qs, ks));
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(Error::shape("scaled_dot_attention", ks, vs));
    }
    if let Some(m) = key_mask {
        if m.len() != ks[0] {
            return Err(Error::shape("scaled_dot_attention", ks, &[m.len()]));
        }
    }
    let dk = qs[1] as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / dk.sqrt());
    let weights = tape.softmax_rows(scaled, key_mask)?;
    let output = tape.matmul(weights, v)?;
    Ok(AttentionResult { weights, output })
}

fn check_row_stochastic(t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_STOCHASTIC_TOL || row.iter().any(|&x| x < -ROW_STOCHASTIC_TOL) {
            return Err(Error::NotRowStochastic { row: r, sum });
        }
    }
    Ok(())
}

/// `softmax(A·1 − weights)` row by row, masked keys re-excluded.
///
/// `a_value` shifts every logit of a row by the same constant, so it has no
/// effect on the result; it is kept as an explicit argument only so the
/// scalar matrix appears where the formula places it.
pub fn inverse_weights(
    tape: &mut Tape,
    weights: Var,
    key_mask: Option<&[bool]>,
    a_value: f64,
) -> Result<Var> {
    check_row_stochastic(tape.value(weights))?;
    let shifted = tape.affine(weights, -1.0, a_value);
    tape.softmax_rows(shifted, key_mask)
}

/// Inverse weights of a finished attention map applied to the same values.
/// Within a row the inverse weights are ordered exactly opposite to the
/// input weights over unmasked keys.
pub fn inverse_attention(
    tape: &mut Tape,
    weights: Var,
    v: Var,
    key_mask: Option<&[bool]>,
    a_value: f64,
) -> Result<AttentionResult> {
    let inv = inverse_weights(tape, weights, key_mask, a_value)?;
    let output = tape.matmul(inv, v)?;
    Ok(AttentionResult {
        weights: inv,
        output,
    })
}

/// `g = σ([r_cons, r_incons]·W_g + b_g)`; returns
/// `g ⊙ r_cons + (1 − g) ⊙ r_incons`.
pub fn gate_combine(tape: &mut Tape, r_cons: Var, r_incons: Var, gate: &GateParams) -> Result<Var> {
    if tape.shape(r_cons) != tape.shape(r_incons) {
        return Err(Error::shape(
            "gate_combine",
            tape.shape(r_cons),
            tape.shape(r_incons),
        ));
    }
    let cat = tape.concat_last_dim(r_cons, r_incons)?;
    let pre = tape.matmul(cat, gate.w)?;
    let pre = tape.add(pre, gate.b)?;
    let g = tape.sigmoid(pre);
    tape.gate_mix(g, r_cons, r_incons)
}

#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    pub attention: AttentionResult,
    pub inverse: Option<AttentionResult>,
}

#[derive(Debug, Clone)]
pub struct MhaOutput {
    pub output: Var,
    pub heads: Vec<HeadTrace>,
}

/// Multi-head attention of `x_q` over `x_kv`.
///
/// With `with_inverse`, each head also runs inverse attention on its own
/// weight map and the two head outputs are merged by that head's gate
/// before concatenation; one `W_cat` serves both branches.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    params: &MhaParams,
    key_mask: Option<&[bool]>,
    with_inverse: bool,
    a_value: f64,
) -> Result<MhaOutput> {
    let mut heads = Vec::with_capacity(params.heads.len());
    let mut outs = Vec::with_capacity(params.heads.len());
    for hp in &params.heads {
        let q = tape.matmul(x_q, hp.wq)?;
        let k = tape.matmul(x_kv, hp.wk)?;
        let v = tape.matmul(x_kv, hp.wv)?;
        let att = scaled_dot_attention(tape, q, k, v, key_mask)?;
        let (out, inverse) = if with_inverse {
            let gate = hp.gate.as_ref().ok_or_else(|| {
                Error::Config("inverse branch requested without gate parameters".into())
            })?;
            let inv = inverse_attention(tape, att.weights, v, key_mask, a_value)?;
            (gate_combine(tape, att.output, inv.output, gate)?, Some(inv))
        } else {
            (att.output, None)
        };
        outs.push(out);
        heads.push(HeadTrace {
            attention: att,
            inverse,
        });
    }
    let cat = tape.concat_cols(&outs)?;
    let output = tape.matmul(cat, params.w_cat)?;
    Ok(MhaOutput { output, heads })
}

/// `R̂ = LN(X + attended·W_fc1)`, `R = LN(R̂ + ReLU(R̂·W_fc2 + b))`.
pub fn transformer_block(tape: &mut Tape, x: Var, attended: Var, p: &BlockParams) -> Result<Var> {
    if tape.shape(x) != tape.shape(attended) {
        return Err(Error::shape(
            "transformer_block",
            tape.shape(x),
            tape.shape(attended),
        ));
    }
    let proj = tape.matmul(attended, p.w_fc1)?;
    let res = tape.add(x, proj)?;
    let r_hat = tape.layer_norm(res, p.ln1_gain, p.ln1_bias)?;
    let ff = tape.matmul(r_hat, p.w_fc2)?;
    let ff = tape.add(ff, p.b)?;
    let ff = tape.relu(ff);
    let res2 = tape.add(r_hat, ff)?;
    tape.layer_norm(res2, p.ln2_gain, p.ln2_bias)
}

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(n_positions: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::OddDimension(d));
    }
    let mut data = vec![0.0; n_positions * d];
    for pos in 0..n_positions {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(n_positions, d, data)
}
