//! Brute-force forward pass on plain nested vectors. Shares no kernels with
//! the library: every matrix product, softmax and normalization is written
//! out from its formula, and parameters are read straight off
//! `ModelParams` by path.

use mian::data::NewsSample;
use mian::model::{Ablation, ModelConfig};
use mian::numerics::ModelParams;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(params: &ModelParams, path: &str) -> Mat {
    let t = params
        .get(path)
        .unwrap_or_else(|_| panic!("missing {path}"));
    let s = t.shape();
    let (r, c) = if s.len() == 1 {
        (1, s[0])
    } else {
        (s[0], s[1])
    };
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

pub fn row(params: &ModelParams, path: &str) -> Vec<f64> {
    params.get(path).unwrap().data().to_vec()
}

pub fn to_mat(t: &mian::numerics::Tensor) -> Mat {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn zip_with(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect())
        .collect()
}

fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn hcat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row softmax over the columns where `valid[j]`; excluded columns are 0.
pub fn softmax(scores: &Mat, valid: &[bool]) -> Mat {
    scores
        .iter()
        .map(|r| {
            let max = r
                .iter()
                .zip(valid)
                .filter(|(_, &v)| v)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r
                .iter()
                .zip(valid)
                .map(|(&x, &v)| if v { (x - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let d = r.len() as f64;
            let mu = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
            let sd = (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(c, v)| gain[c] * (v - mu) / sd + bias[c])
                .collect()
        })
        .collect()
}

pub struct Attn {
    pub weights: Mat,
    pub output: Mat,
}

pub fn attention(q: &Mat, k: &Mat, v: &Mat, valid: &[bool]) -> Attn {
    let dk = q[0].len() as f64;
    let s: Mat = matmul(q, &transpose(k))
        .into_iter()
        .map(|r| r.into_iter().map(|x| x / dk.sqrt()).collect())
        .collect();
    let weights = softmax(&s, valid);
    let output = matmul(&weights, v);
    Attn { weights, output }
}

pub fn inverse(weights: &Mat, v: &Mat, valid: &[bool], a: f64) -> Attn {
    let shifted: Mat = weights
        .iter()
        .map(|r| r.iter().map(|w| a - w).collect())
        .collect();
    let w = softmax(&shifted, valid);
    let output = matmul(&w, v);
    Attn { weights: w, output }
}

pub fn gate(cons: &Mat, incons: &Mat, wg: &Mat, bg: &[f64]) -> Mat {
    let pre = add_row(&matmul(&hcat(&[cons.clone(), incons.clone()]), wg), bg);
    let g: Mat = pre
        .iter()
        .map(|r| r.iter().map(|&x| sigmoid(x)).collect())
        .collect();
    let mixed = zip_with(&g, cons, |g, c| g * c);
    let rest = zip_with(&g, incons, |g, i| (1.0 - g) * i);
    zip_with(&mixed, &rest, |a, b| a + b)
}

pub fn block(p: &ModelParams, prefix: &str, x: &Mat, attended: &Mat) -> Mat {
    let r1 = zip_with(
        x,
        &matmul(attended, &mat(p, &format!("{prefix}.Wfc1"))),
        |a, b| a + b,
    );
    let r_hat = layer_norm(
        &r1,
        &row(p, &format!("{prefix}.ln1.gain")),
        &row(p, &format!("{prefix}.ln1.bias")),
    );
    let ff = add_row(
        &matmul(&r_hat, &mat(p, &format!("{prefix}.Wfc2"))),
        &row(p, &format!("{prefix}.b")),
    );
    let ff: Mat = ff
        .iter()
        .map(|r| r.iter().map(|&x| x.max(0.0)).collect())
        .collect();
    let r2 = zip_with(&r_hat, &ff, |a, b| a + b);
    layer_norm(
        &r2,
        &row(p, &format!("{prefix}.ln2.gain")),
        &row(p, &format!("{prefix}.ln2.bias")),
    )
}

/// Multi-head attention of `xq` over `xkv`; returns the `W_cat` projection.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    p: &ModelParams,
    prefix: &str,
    xq: &Mat,
    xkv: &Mat,
    valid: &[bool],
    heads: usize,
    inv: bool,
    a: f64,
) -> Mat {
    let mut outs = Vec::new();
    for h in 0..heads {
        let hp = format!("{prefix}.head{h}");
        let q = matmul(xq, &mat(p, &format!("{hp}.Wq")));
        let k = matmul(xkv, &mat(p, &format!("{hp}.Wk")));
        let v = matmul(xkv, &mat(p, &format!("{hp}.Wv")));
        let att = attention(&q, &k, &v, valid);
        let out = if inv {
            let ia = inverse(&att.weights, &v, valid, a);
            gate(
                &att.output,
                &ia.output,
                &mat(p, &format!("{hp}.gate.Wg")),
                &row(p, &format!("{hp}.gate.bg")),
            )
        } else {
            att.output
        };
        outs.push(out);
    }
    matmul(&hcat(&outs), &mat(p, &format!("{prefix}.Wcat")))
}

pub fn positional(n: usize, d: usize) -> Mat {
    (0..n)
        .map(|pos| {
            (0..d)
                .map(|j| {
                    let i = (j / 2) as f64;
                    let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn masked_mean(x: &Mat, valid: &[bool]) -> Vec<f64> {
    let n = valid.iter().filter(|&&v| v).count() as f64;
    let mut out = vec![0.0; x[0].len()];
    for (r, &v) in x.iter().zip(valid) {
        if v {
            for (o, val) in out.iter_mut().zip(r) {
                *o += val / n;
            }
        }
    }
    out
}

pub struct Branch {
    pub seq: Mat,
    pub ll: Mat,
    pub lg_weights: Option<Vec<f64>>,
}

pub fn branch(
    p: &ModelParams,
    cfg: &ModelConfig,
    prefix: &str,
    tokens: &Mat,
    cls: &[f64],
    valid: &[bool],
) -> Branch {
    let a = cfg.ablation;
    let x: Mat = tokens
        .iter()
        .zip(valid)
        .map(|(r, &v)| if v { r.clone() } else { vec![0.0; r.len()] })
        .collect();
    let mut ll = x.clone();
    for l in 0..cfg.n_layers {
        let lp = format!("{prefix}.l2l.layer{l}");
        let att = multi_head(
            p,
            &lp,
            &ll,
            &ll,
            valid,
            cfg.n_heads,
            !a.intra_ll_ic,
            cfg.a_value,
        );
        ll = block(p, &format!("{lp}.ffn"), &ll, &att);
    }
    if a.intra_lg {
        return Branch {
            seq: ll.clone(),
            ll,
            lg_weights: None,
        };
    }
    let mut g = masked_mean(&x, valid);
    g.extend_from_slice(cls);
    let guide: Vec<f64> = matmul(&vec![g], &mat(p, &format!("{prefix}.l2g.W2")))[0]
        .iter()
        .map(|v| v.tanh())
        .collect();
    let local = matmul(&x, &mat(p, &format!("{prefix}.l2g.W1")));
    let h: Mat = local
        .iter()
        .map(|r| r.iter().zip(&guide).map(|(a, b)| (a * b).tanh()).collect())
        .collect();
    let raw = transpose(&matmul(&h, &mat(p, &format!("{prefix}.l2g.W3"))));
    let w = softmax(&raw, valid)[0].clone();
    let scale = |wt: &[f64]| -> Mat {
        x.iter()
            .zip(wt)
            .map(|(r, s)| r.iter().map(|v| v * s).collect())
            .collect()
    };
    let cons = scale(&w);
    let lg = if a.intra_lg_ic {
        cons
    } else {
        let inv = softmax(&vec![w.iter().map(|v| cfg.a_value - v).collect()], valid)[0].clone();
        gate(
            &cons,
            &scale(&inv),
            &mat(p, &format!("{prefix}.l2g.gate.Wg")),
            &row(p, &format!("{prefix}.l2g.gate.bg")),
        )
    };
    let seq = matmul(
        &hcat(&[ll.clone(), lg]),
        &mat(p, &format!("{prefix}.Wfuse")),
    );
    Branch {
        seq,
        ll,
        lg_weights: Some(w),
    }
}

pub fn co_attend(
    p: &ModelParams,
    cfg: &ModelConfig,
    prefix: &str,
    target: &Mat,
    source: &Mat,
    valid: &[bool],
) -> Mat {
    let mut x = target.clone();
    for l in 0..cfg.n_layers {
        let lp = format!("{prefix}.layer{l}");
        let att = multi_head(
            p,
            &lp,
            &x,
            source,
            valid,
            cfg.n_heads,
            !cfg.ablation.inter_ic,
            cfg.a_value,
        );
        x = block(p, &format!("{lp}.ffn"), &x, &att);
    }
    x
}

pub struct Output {
    pub y_hat: f64,
    pub logit: f64,
    pub r_n: Vec<f64>,
}

pub fn forward(p: &ModelParams, cfg: &ModelConfig, s: &NewsSample) -> Output {
    let (m, u, d) = (s.m(), s.u(), s.d());
    let add = |a: &Mat, b: &Mat| zip_with(a, b, |x, y| x + y);
    let text = add(&to_mat(&s.text_tokens), &positional(m, d));
    let image = add(&to_mat(&s.image_patches), &positional(u, d));
    let all_image = vec![true; u];
    let t = branch(p, cfg, "hlm.text", &text, s.text_cls.data(), &s.text_mask);
    let o = branch(p, cfg, "hlm.image", &image, s.image_cls.data(), &all_image);
    let t2o = co_attend(p, cfg, "cim.t2o", &t.seq, &o.seq, &all_image);
    let o2t = co_attend(p, cfg, "cim.o2t", &o.seq, &t.seq, &s.text_mask);
    let mut r_n = masked_mean(&t.seq, &s.text_mask);
    r_n.extend(masked_mean(&o.seq, &all_image));
    r_n.extend(masked_mean(&t2o, &s.text_mask));
    r_n.extend(masked_mean(&o2t, &all_image));
    let hidden = add_row(
        &matmul(&vec![r_n.clone()], &mat(p, "clf.W1")),
        &row(p, "clf.b1"),
    );
    let hidden: Mat = hidden
        .iter()
        .map(|r| r.iter().map(|&x| x.max(0.0)).collect())
        .collect();
    let logit = add_row(&matmul(&hidden, &mat(p, "clf.W2")), &row(p, "clf.b2"))[0][0];
    Output {
        y_hat: sigmoid(logit),
        logit,
        r_n,
    }
}

pub fn with_ablation(cfg: &ModelConfig, a: Ablation) -> ModelConfig {
    ModelConfig {
        ablation: a,
        ..cfg.clone()
    }
}
