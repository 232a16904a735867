//! Pre-norm encoder blocks: gated multi-head attention with partial rotary
//! encoding, followed by a GELU feed-forward network. Every forward returns
//! the cache its backward needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rope::RopeTable;
use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParameterStore};
use crate::tensor::{self, gelu, gelu_grad, linear, linear_backward, sigmoid, Mat};

const LN_EPS: f64 = 1e-5;

/// Gate bias offset at initialization; `sigmoid(2) ~ 0.88` keeps gates near-open.
pub const GATE_BIAS_INIT: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct LayerNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wg: ParamId,
    pub bg: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub ln1: LayerNormIds,
    pub attn: AttentionIds,
    pub ln2: LayerNormIds,
    pub ffn: FfnIds,
}

impl LayerIds {
    pub fn register(
        store: &mut ParameterStore,
        l: usize,
        cfg: &BackboneConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let p = |s: &str| format!("layers.{l}.{s}");
        let w = Init::TruncNormal(0.02);
        let mut add = |name: &str, shape: &[usize], init: Init| store.add(&p(name), shape, init, rng);
        let ln1 = LayerNormIds {
            gamma: add("ln1.gamma", &[d], Init::Constant(1.0))?,
            beta: add("ln1.beta", &[d], Init::Zeros)?,
        };
        let attn = AttentionIds {
            wq: add("attn.wq", &[d, d], w)?,
            bq: add("attn.bq", &[d], Init::Zeros)?,
            wk: add("attn.wk", &[d, d], w)?,
            bk: add("attn.bk", &[d], Init::Zeros)?,
            wv: add("attn.wv", &[d, d], w)?,
            bv: add("attn.bv", &[d], Init::Zeros)?,
            wg: add("attn.wg", &[d, d], w)?,
            bg: add("attn.bg", &[d], Init::Constant(GATE_BIAS_INIT))?,
            wo: add("attn.wo", &[d, d], w)?,
            bo: add("attn.bo", &[d], Init::Zeros)?,
        };
        let ln2 = LayerNormIds {
            gamma: add("ln2.gamma", &[d], Init::Constant(1.0))?,
            beta: add("ln2.beta", &[d], Init::Zeros)?,
        };
        let ffn = FfnIds {
            w1: add("ffn.w1", &[d, f], w)?,
            b1: add("ffn.b1", &[f], Init::Zeros)?,
            w2: add("ffn.w2", &[f, d], w)?,
            b2: add("ffn.b2", &[d], Init::Zeros)?,
        };
        Ok(Self { ln1, attn, ln2, ffn })
    }

    pub fn bind(store: &ParameterStore, l: usize) -> Result<Self> {
        let r = |s: &str| store.require(&format!("layers.{l}.{s}"));
        Ok(Self {
            ln1: LayerNormIds {
                gamma: r("ln1.gamma")?,
                beta: r("ln1.beta")?,
            },
            attn: AttentionIds {
                wq: r("attn.wq")?,
                bq: r("attn.bq")?,
                wk: r("attn.wk")?,
                bk: r("attn.bk")?,
                wv: r("attn.wv")?,
                bv: r("attn.bv")?,
                wg: r("attn.wg")?,
                bg: r("attn.bg")?,
                wo: r("attn.wo")?,
                bo: r("attn.bo")?,
            },
            ln2: LayerNormIds {
                gamma: r("ln2.gamma")?,
                beta: r("ln2.beta")?,
            },
            ffn: FfnIds {
                w1: r("ffn.w1")?,
                b1: r("ffn.b1")?,
                w2: r("ffn.w2")?,
                b2: r("ffn.b2")?,
            },
        })
    }
}

// ---------------------------------------------------------------------------
// layer norm

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, LayerNormCache) {
    let d = x.cols;
    let mut xhat = Mat::zeros(x.rows, d);
    let mut y = Mat::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (r[j] - mean) * is;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = xhat[(i, j)] * gamma[j] + beta[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &Mat,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
        }
        let s1: f64 = dxhat.iter().sum();
        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let k = cache.inv_std[i] / d as f64;
        let dxr = dx.row_mut(i);
        for j in 0..d {
            dxr[j] = k * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// gated attention

/// Intermediate values of one attention call.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    g: Mat,
    /// Per-head `n x n` row-stochastic attention weights.
    pub weights: Vec<Mat>,
    ctx: Mat,
    gated: Mat,
}

fn head_slice(m: &Mat, h: usize, dh: usize) -> Mat {
    Mat::from_fn(m.rows, dh, |i, j| m[(i, h * dh + j)])
}

/// Gated multi-head attention over the rows of `x` (already normalized).
///
/// Output is `((softmax(Q'K'^T / sqrt(dh)) V) * sigmoid(G)) Wo + bo`, where
/// `Q'`, `K'` carry partial rotary encoding and `G = x Wg + bg`.
pub fn gated_attention(
    x: &Mat,
    positions: &[i64],
    store: &ParameterStore,
    ids: &AttentionIds,
    cfg: &BackboneConfig,
    rope: &RopeTable,
    layer: usize,
) -> Result<(Mat, AttentionCache)> {
    let n = x.rows;
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let v = |id| store.values(id);
    let mut q = linear(x, v(ids.wq), v(ids.bq));
    let mut k = linear(x, v(ids.wk), v(ids.bk));
    let vals = linear(x, v(ids.wv), v(ids.bv));
    let g = linear(x, v(ids.wg), v(ids.bg));
    rope.rotate_rows(&mut q.data, d, positions, false);
    rope.rotate_rows(&mut k.data, d, positions, false);

    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Mat::zeros(n, d);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = head_slice(&q, h, dh);
        let kh = head_slice(&k, h, dh);
        let vh = head_slice(&vals, h, dh);
        let mut s = tensor::matmul_nt(&qh, &kh);
        for x in s.data.iter_mut() {
            *x *= scale;
        }
        if let Some(pos) = s.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite attention score in layer {layer}, head {h} at ({}, {})",
                pos / n,
                pos % n
            )));
        }
        for row in s.data.chunks_exact_mut(n) {
            tensor::softmax_in_place(row);
        }
        let ch = tensor::matmul(&s, &vh);
        for i in 0..n {
            ctx.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(ch.row(i));
        }
        weights.push(s);
    }
    let mut gated = ctx.clone();
    for (o, gv) in gated.data.iter_mut().zip(&g.data) {
        *o *= sigmoid(*gv);
    }
    let out = linear(&gated, v(ids.wo), v(ids.bo));
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v: vals,
            g,
            weights,
            ctx,
            gated,
        },
    ))
}

/// Backward of [`gated_attention`]; returns the gradient w.r.t. its input.
pub fn gated_attention_backward(
    cache: &AttentionCache,
    d_out: &Mat,
    positions: &[i64],
    store: &ParameterStore,
    ids: &AttentionIds,
    cfg: &BackboneConfig,
    rope: &RopeTable,
    grads: &mut Gradients,
) -> Mat {
    let n = d_out.rows;
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();

    let (dwo, dbo) = two_mut(grads, ids.wo, ids.bo);
    let d_gated = linear_backward(&cache.gated, store.values(ids.wo), d_out, dwo, dbo);

    let mut d_ctx = Mat::zeros(n, d);
    let mut d_g = Mat::zeros(n, d);
    for idx in 0..n * d {
        let sg = sigmoid(cache.g.data[idx]);
        d_ctx.data[idx] = d_gated.data[idx] * sg;
        d_g.data[idx] = d_gated.data[idx] * cache.ctx.data[idx] * sg * (1.0 - sg);
    }

    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    let mut ds_row = vec![0.0; n];
    for h in 0..cfg.n_heads {
        let a = &cache.weights[h];
        let qh = head_slice(&cache.q, h, dh);
        let kh = head_slice(&cache.k, h, dh);
        let vh = head_slice(&cache.v, h, dh);
        let dch = head_slice(&d_ctx, h, dh);
        let da = tensor::matmul_nt(&dch, &vh);
        let dvh = tensor::matmul_tn(a, &dch);
        let mut ds = Mat::zeros(n, n);
        for i in 0..n {
            tensor::softmax_backward(a.row(i), da.row(i), &mut ds_row);
            for (o, x) in ds.row_mut(i).iter_mut().zip(&ds_row) {
                *o = x * scale;
            }
        }
        let dqh = tensor::matmul(&ds, &kh);
        let dkh = tensor::matmul_tn(&ds, &qh);
        for i in 0..n {
            dq.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(dqh.row(i));
            dk.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(dkh.row(i));
            dv.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(dvh.row(i));
        }
    }
    rope.rotate_rows(&mut dq.data, d, positions, true);
    rope.rotate_rows(&mut dk.data, d, positions, true);

    let x = &cache.x;
    let mut dx = {
        let (w, b) = two_mut(grads, ids.wq, ids.bq);
        linear_backward(x, store.values(ids.wq), &dq, w, b)
    };
    for (src, wid, bid) in [(&dk, ids.wk, ids.bk), (&dv, ids.wv, ids.bv), (&d_g, ids.wg, ids.bg)] {
        let (w, b) = two_mut(grads, wid, bid);
        dx.add_assign(&linear_backward(x, store.values(wid), src, w, b));
    }
    dx
}

/// Disjoint mutable borrows of two gradient slots.
pub(crate) fn two_mut(g: &mut Gradients, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    if a.0 < b.0 {
        let (lo, hi) = g.0.split_at_mut(b.0);
        (&mut lo[a.0], &mut hi[0])
    } else {
        let (lo, hi) = g.0.split_at_mut(a.0);
        (&mut hi[0], &mut lo[b.0])
    }
}

// ---------------------------------------------------------------------------
// blocks

#[derive(Debug, Clone)]
struct Dropout {
    mask: Vec<f64>,
}

impl Dropout {
    fn sample(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Self {
        let keep = 1.0 / (1.0 - p);
        Self {
            mask: (0..len)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect(),
        }
    }

    fn apply(&self, m: &mut Mat) {
        m.data.iter_mut().zip(&self.mask).for_each(|(x, k)| *x *= k);
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    pub attn: AttentionCache,
    attn_drop: Option<Dropout>,
    ln2: LayerNormCache,
    h2: Mat,
    f_pre: Mat,
    f_act: Mat,
    ffn_drop: Option<Dropout>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub blocks: Vec<BlockCache>,
}

/// Runs every block; `dropout_rng` enables train-mode dropout.
pub fn encoder_forward(
    tokens: &Mat,
    positions: &[i64],
    store: &ParameterStore,
    layers: &[LayerIds],
    cfg: &BackboneConfig,
    rope: &RopeTable,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Mat, EncoderCache)> {
    let mut x = tokens.clone();
    let mut blocks = Vec::with_capacity(layers.len());
    let p = cfg.dropout;
    for (l, ids) in layers.iter().enumerate() {
        let (h1, ln1) = layer_norm(&x, store.values(ids.ln1.gamma), store.values(ids.ln1.beta));
        let (mut a, attn) = gated_attention(&h1, positions, store, &ids.attn, cfg, rope, l)?;
        let attn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let dr = Dropout::sample(rng, a.len(), p);
                dr.apply(&mut a);
                Some(dr)
            }
            _ => None,
        };
        x.add_assign(&a);

        let (h2, ln2) = layer_norm(&x, store.values(ids.ln2.gamma), store.values(ids.ln2.beta));
        let f_pre = linear(&h2, store.values(ids.ffn.w1), store.values(ids.ffn.b1));
        let f_act = Mat {
            rows: f_pre.rows,
            cols: f_pre.cols,
            data: f_pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let mut f = linear(&f_act, store.values(ids.ffn.w2), store.values(ids.ffn.b2));
        let ffn_drop = match dropout_rng.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let dr = Dropout::sample(rng, f.len(), p);
                dr.apply(&mut f);
                Some(dr)
            }
            _ => None,
        };
        x.add_assign(&f);
        blocks.push(BlockCache {
            ln1,
            attn,
            attn_drop,
            ln2,
            h2,
            f_pre,
            f_act,
            ffn_drop,
        });
    }
    Ok((x, EncoderCache { blocks }))
}

/// Backward through all blocks; returns the gradient w.r.t. the input tokens.
#[allow(clippy::too_many_arguments)]
pub fn encoder_backward(
    cache: &EncoderCache,
    d_out: &Mat,
    positions: &[i64],
    store: &ParameterStore,
    layers: &[LayerIds],
    cfg: &BackboneConfig,
    rope: &RopeTable,
    grads: &mut Gradients,
) -> Mat {
    let mut dx = d_out.clone();
    for (ids, bc) in layers.iter().zip(&cache.blocks).rev() {
        // ffn branch
        let mut df = dx.clone();
        if let Some(dr) = &bc.ffn_drop {
            dr.apply(&mut df);
        }
        let d_act = {
            let (w, b) = two_mut(grads, ids.ffn.w2, ids.ffn.b2);
            linear_backward(&bc.f_act, store.values(ids.ffn.w2), &df, w, b)
        };
        let d_pre = Mat {
            rows: d_act.rows,
            cols: d_act.cols,
            data: d_act
                .data
                .iter()
                .zip(&bc.f_pre.data)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect(),
        };
        let dh2 = {
            let (w, b) = two_mut(grads, ids.ffn.w1, ids.ffn.b1);
            linear_backward(&bc.h2, store.values(ids.ffn.w1), &d_pre, w, b)
        };
        let (dg, db) = two_mut(grads, ids.ln2.gamma, ids.ln2.beta);
        dx.add_assign(&layer_norm_backward(&bc.ln2, store.values(ids.ln2.gamma), &dh2, dg, db));

        // attention branch
        let mut da = dx.clone();
        if let Some(dr) = &bc.attn_drop {
            dr.apply(&mut da);
        }
        let dh1 = gated_attention_backward(&bc.attn, &da, positions, store, &ids.attn, cfg, rope, grads);
        let (dg, db) = two_mut(grads, ids.ln1.gamma, ids.ln1.beta);
        dx.add_assign(&layer_norm_backward(&bc.ln1, store.values(ids.ln1.gamma), &dh1, dg, db));
    }
    dx
}
