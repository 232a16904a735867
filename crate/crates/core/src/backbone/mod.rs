//! The encoder-only temporal backbone.
//!
//! A window is instance-normalized, cut into patches and laid out on a
//! fixed-capacity token grid:
//!
//! ```text
//! [ masked context patches | register | future placeholders ]
//!   0 .. max_ctx             max_ctx    max_ctx+1 .. n_tokens
//! ```
//!
//! Unused leading context slots are zeroed before the patch projection, so a
//! single network serves every context length in `[L_min, L_max]`. The
//! encoder output at the future slots feeds a shared multi-quantile head.

pub mod encoder;
pub mod loss;
pub mod norm;
pub mod rope;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use encoder::{encoder_backward, encoder_forward, gated_attention, EncoderCache, LayerIds};
pub use loss::{l1_median_loss, pinball_loss};
pub use norm::{denormalize, instance_normalize, patchify, NormStats};
pub use rope::{p_rope, RopeTable};

use crate::config::{BackboneConfig, LossKind};
use crate::data::window::SeriesWindow;
use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParameterStore};
use crate::tensor::{self, Mat};

/// Per-horizon-step values at each quantile level, in original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    /// `H x |quantiles|`
    pub values: Mat,
    pub quantiles: Vec<f64>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.values.rows
    }

    pub fn level_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&x| (x - q).abs() < 1e-9)
    }

    /// Forecast path at level `q`, if configured.
    pub fn level(&self, q: f64) -> Option<Vec<f64>> {
        let j = self.level_index(q)?;
        Some((0..self.values.rows).map(|i| self.values[(i, j)]).collect())
    }

    pub fn median(&self) -> Vec<f64> {
        self.level(0.5).expect("quantile set contains the median")
    }
}

/// The token grid fed to the encoder.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    /// `n_tokens x d_model`
    pub tokens: Mat,
    /// Rotary positions; negative entries are left unrotated.
    pub positions: Vec<i64>,
    /// Index of the first unmasked context patch.
    pub valid_from: usize,
    /// The context patches after masking, as seen by the projection.
    pub masked_patches: Mat,
}

#[derive(Debug, Clone)]
pub struct BackboneIds {
    pub w_proj: ParamId,
    pub b_proj: ParamId,
    pub e_reg: ParamId,
    pub z_fut: ParamId,
    pub layers: Vec<LayerIds>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Backbone architecture bound to entries of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub ids: BackboneIds,
    rope: RopeTable,
}

/// Uniform mask length in `[0, max_ctx - min_ctx]`.
pub fn sample_mask_length(rng: &mut impl Rng, min_ctx: usize, max_ctx: usize) -> usize {
    assert!(min_ctx <= max_ctx, "min_ctx must not exceed max_ctx");
    rng.random_range(0..=max_ctx - min_ctx)
}

/// A window prepared for the token grid: normalized, patched, right-aligned.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    /// `max_ctx_patches x patch_len`, unused leading slots zero.
    pub patches: Mat,
    pub stats: NormStats,
    pub l_mask: usize,
    pub fut_count: usize,
    pub horizon: usize,
    /// Target on the normalized scale, when the window has one.
    pub target: Vec<f64>,
}

/// Everything produced by one backbone pass over a window.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub prepared: PreparedWindow,
    pub seq: TokenSequence,
    pub cache: EncoderCache,
    pub encoded: Mat,
    /// Normalized-scale quantile predictions, `H x |Q|`.
    pub pred: Mat,
}

impl Backbone {
    /// Registers freshly initialized backbone parameters in `store`.
    pub fn init(cfg: BackboneConfig, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let w = Init::TruncNormal(0.02);
        let w_proj = store.add("embed.w_proj", &[cfg.patch_len, d], w, rng)?;
        let b_proj = store.add("embed.b_proj", &[d], Init::Zeros, rng)?;
        let e_reg = store.add("embed.e_reg", &[d], w, rng)?;
        let z_fut = store.add("embed.z_fut", &[d], w, rng)?;
        let layers = (0..cfg.n_layers)
            .map(|l| LayerIds::register(store, l, &cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = cfg.patch_len * cfg.n_quantiles();
        let head_w = store.add("head.w", &[d, out], w, rng)?;
        let head_b = store.add("head.b", &[out], Init::Zeros, rng)?;
        let rope = RopeTable::new(&cfg, cfg.n_tokens());
        Ok(Self {
            ids: BackboneIds {
                w_proj,
                b_proj,
                e_reg,
                z_fut,
                layers,
                head_w,
                head_b,
            },
            cfg,
            rope,
        })
    }

    /// Resolves an existing store (e.g. a loaded checkpoint) against `cfg`.
    pub fn bind(cfg: BackboneConfig, store: &ParameterStore) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.n_layers)
            .map(|l| LayerIds::bind(store, l))
            .collect::<Result<Vec<_>>>()?;
        let ids = BackboneIds {
            w_proj: store.require("embed.w_proj")?,
            b_proj: store.require("embed.b_proj")?,
            e_reg: store.require("embed.e_reg")?,
            z_fut: store.require("embed.z_fut")?,
            layers,
            head_w: store.require("head.w")?,
            head_b: store.require("head.b")?,
        };
        let expect = |id: ParamId, shape: &[usize]| {
            let e = store.entry(id);
            if e.shape != shape {
                Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, config expects {shape:?}",
                    e.name, e.shape
                )))
            } else {
                Ok(())
            }
        };
        expect(ids.w_proj, &[cfg.patch_len, cfg.d_model])?;
        expect(ids.head_w, &[cfg.d_model, cfg.patch_len * cfg.n_quantiles()])?;
        for l in &ids.layers {
            expect(l.ffn.w1, &[cfg.d_model, cfg.d_ff])?;
        }
        let rope = RopeTable::new(&cfg, cfg.n_tokens());
        Ok(Self { cfg, ids, rope })
    }

    pub fn rope(&self) -> &RopeTable {
        &self.rope
    }

    /// Names of every backbone parameter (used to freeze the backbone).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let i = &self.ids;
        let mut v = vec![i.w_proj, i.b_proj, i.e_reg, i.z_fut, i.head_w, i.head_b];
        for l in &i.layers {
            v.extend([
                l.ln1.gamma, l.ln1.beta, l.attn.wq, l.attn.bq, l.attn.wk, l.attn.bk, l.attn.wv,
                l.attn.bv, l.attn.wg, l.attn.bg, l.attn.wo, l.attn.bo, l.ln2.gamma, l.ln2.beta,
                l.ffn.w1, l.ffn.b1, l.ffn.w2, l.ffn.b2,
            ]);
        }
        v
    }

    /// Mask length implied by a context of `len` steps at inference.
    pub fn inference_mask(&self, len: usize) -> usize {
        let p = len.div_ceil(self.cfg.patch_len);
        self.cfg.max_ctx_patches.saturating_sub(p)
    }

    /// Normalizes and lays out `context` (and `target`, if any) for mask `l_mask`.
    ///
    /// Statistics come from the unmasked part of the context only.
    pub fn prepare(&self, context: &[f64], target: &[f64], horizon: usize, l_mask: usize) -> Result<PreparedWindow> {
        let c = &self.cfg;
        if context.is_empty() {
            return Err(Error::Windowing("empty context".into()));
        }
        if context.len() > c.max_context() {
            return Err(Error::Windowing(format!(
                "context length {} exceeds capacity {}",
                context.len(),
                c.max_context()
            )));
        }
        let max_mask = c.max_ctx_patches - c.min_ctx_patches;
        if l_mask > max_mask {
            return Err(Error::MaskBounds { l_mask, max: max_mask });
        }
        if horizon == 0 || horizon > c.max_horizon() {
            return Err(Error::Horizon(format!(
                "horizon {horizon} outside 1..={}; use rolling_forecast beyond the maximum",
                c.max_horizon()
            )));
        }
        let slots = c.max_ctx_patches - l_mask;
        let keep = context.len().min(slots * c.patch_len);
        let effective = &context[context.len() - keep..];
        let (normed, stats) = instance_normalize(effective, c.eps)?;
        let mut patches = Mat::zeros(c.max_ctx_patches, c.patch_len);
        // right-align; a partial leading patch is left zero-padded
        let total = c.max_ctx_patches * c.patch_len;
        patches.data[total - keep..].copy_from_slice(&normed);
        let l_mask = l_mask.max(self.inference_mask(keep));
        let target = target.iter().map(|&y| stats.apply(y, c.eps)).collect();
        Ok(PreparedWindow {
            patches,
            stats,
            l_mask,
            fut_count: horizon.div_ceil(c.patch_len),
            horizon,
            target,
        })
    }

    /// Builds the token grid from `max_ctx_patches x patch_len` context patches.
    pub fn build_token_sequence(
        &self,
        ctx_patches: &Mat,
        l_mask: usize,
        fut_count: usize,
        store: &ParameterStore,
    ) -> Result<TokenSequence> {
        let c = &self.cfg;
        if ctx_patches.rows != c.max_ctx_patches || ctx_patches.cols != c.patch_len {
            return Err(Error::Shape(format!(
                "context patches {}x{}, expected {}x{}",
                ctx_patches.rows, ctx_patches.cols, c.max_ctx_patches, c.patch_len
            )));
        }
        let max_mask = c.max_ctx_patches - c.min_ctx_patches;
        if l_mask > max_mask {
            return Err(Error::MaskBounds { l_mask, max: max_mask });
        }
        if fut_count > c.max_fut_patches {
            return Err(Error::Horizon(format!(
                "{fut_count} future patches requested, capacity {}",
                c.max_fut_patches
            )));
        }
        let mut masked = ctx_patches.clone();
        masked.data[..l_mask * c.patch_len].iter_mut().for_each(|x| *x = 0.0);
        let proj = tensor::linear(&masked, store.values(self.ids.w_proj), store.values(self.ids.b_proj));
        let n = c.n_tokens();
        let mut tokens = Mat::zeros(n, c.d_model);
        tokens.data[..proj.len()].copy_from_slice(&proj.data);
        tokens.row_mut(c.register_index()).copy_from_slice(store.values(self.ids.e_reg));
        let z = store.values(self.ids.z_fut);
        for r in c.register_index() + 1..n {
            tokens.row_mut(r).copy_from_slice(z);
        }
        Ok(TokenSequence {
            tokens,
            positions: (0..n as i64).collect(),
            valid_from: l_mask,
            masked_patches: masked,
        })
    }

    /// Accumulates embedding gradients from `d_tokens` (rows aligned with `seq`).
    pub fn embed_backward(&self, seq: &TokenSequence, d_tokens: &Mat, grads: &mut Gradients) {
        let c = &self.cfg;
        let d = c.d_model;
        let ctx = Mat::from_vec(
            c.max_ctx_patches,
            d,
            d_tokens.data[..c.max_ctx_patches * d].to_vec(),
        );
        tensor::accumulate_tn(grads.get_mut(self.ids.w_proj), &seq.masked_patches, &ctx);
        ctx.accumulate_col_sums(grads.get_mut(self.ids.b_proj));
        for (g, x) in grads.get_mut(self.ids.e_reg).iter_mut().zip(d_tokens.row(c.register_index())) {
            *g += x;
        }
        let gz = grads.get_mut(self.ids.z_fut);
        for r in c.register_index() + 1..c.n_tokens() {
            for (g, x) in gz.iter_mut().zip(d_tokens.row(r)) {
                *g += x;
            }
        }
    }

    pub fn encode(
        &self,
        tokens: &Mat,
        positions: &[i64],
        store: &ParameterStore,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Mat, EncoderCache)> {
        encoder_forward(tokens, positions, store, &self.ids.layers, &self.cfg, &self.rope, dropout_rng)
    }

    pub fn encode_backward(
        &self,
        cache: &EncoderCache,
        d_out: &Mat,
        positions: &[i64],
        store: &ParameterStore,
        grads: &mut Gradients,
    ) -> Mat {
        encoder_backward(cache, d_out, positions, store, &self.ids.layers, &self.cfg, &self.rope, grads)
    }

    /// Row of the first future slot, given `offset` prefix tokens.
    fn first_future_row(&self, offset: usize) -> usize {
        offset + self.cfg.register_index() + 1
    }

    /// Maps the first `fut_count` future-slot representations to
    /// `fut_count * patch_len x |Q|` normalized-scale quantiles.
    pub fn quantile_head(&self, encoded: &Mat, fut_count: usize, offset: usize, store: &ParameterStore) -> Result<Mat> {
        let c = &self.cfg;
        if fut_count > c.max_fut_patches {
            return Err(Error::Horizon(format!(
                "{fut_count} future patches requested, head capacity {}",
                c.max_fut_patches
            )));
        }
        let start = self.first_future_row(offset);
        let fut = Mat::from_vec(
            fut_count,
            c.d_model,
            encoded.data[start * c.d_model..(start + fut_count) * c.d_model].to_vec(),
        );
        let y = tensor::linear(&fut, store.values(self.ids.head_w), store.values(self.ids.head_b));
        Ok(Mat::from_vec(fut_count * c.patch_len, c.n_quantiles(), y.data))
    }

    /// Backward of [`Backbone::quantile_head`]; `d_pred` may have fewer rows
    /// than the head produced (truncated horizon). Returns `d_encoded`.
    pub fn quantile_head_backward(
        &self,
        encoded: &Mat,
        fut_count: usize,
        offset: usize,
        d_pred: &Mat,
        store: &ParameterStore,
        grads: &mut Gradients,
    ) -> Mat {
        let c = &self.cfg;
        let width = c.patch_len * c.n_quantiles();
        let start = self.first_future_row(offset);
        let fut = Mat::from_vec(
            fut_count,
            c.d_model,
            encoded.data[start * c.d_model..(start + fut_count) * c.d_model].to_vec(),
        );
        let mut dy = Mat::zeros(fut_count, width);
        dy.data[..d_pred.len()].copy_from_slice(&d_pred.data);
        let (gw, gb) = encoder::two_mut(grads, self.ids.head_w, self.ids.head_b);
        let dfut = tensor::linear_backward(&fut, store.values(self.ids.head_w), &dy, gw, gb);
        let mut d_enc = Mat::zeros(encoded.rows, encoded.cols);
        d_enc.data[start * c.d_model..(start + fut_count) * c.d_model].copy_from_slice(&dfut.data);
        d_enc
    }

    /// Full pass over a prepared window.
    pub fn forward_prepared(
        &self,
        prepared: PreparedWindow,
        store: &ParameterStore,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardTrace> {
        let seq = self.build_token_sequence(&prepared.patches, prepared.l_mask, prepared.fut_count, store)?;
        let (encoded, cache) = self.encode(&seq.tokens, &seq.positions, store, dropout_rng)?;
        let full = self.quantile_head(&encoded, prepared.fut_count, 0, store)?;
        let nq = self.cfg.n_quantiles();
        let pred = Mat::from_vec(prepared.horizon, nq, full.data[..prepared.horizon * nq].to_vec());
        Ok(ForwardTrace {
            prepared,
            seq,
            cache,
            encoded,
            pred,
        })
    }

    /// Backpropagates `d_pred` (normalized scale) into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, d_pred: &Mat, store: &ParameterStore, grads: &mut Gradients) {
        let d_enc = self.quantile_head_backward(&trace.encoded, trace.prepared.fut_count, 0, d_pred, store, grads);
        let d_tok = self.encode_backward(&trace.cache, &d_enc, &trace.seq.positions, store, grads);
        self.embed_backward(&trace.seq, &d_tok, grads);
    }

    pub fn denormalize_forecast(&self, pred: &Mat, stats: NormStats) -> QuantileForecast {
        QuantileForecast {
            values: denormalize(pred, stats, self.cfg.eps),
            quantiles: self.cfg.quantiles.clone(),
        }
    }

    /// Loss and its gradient w.r.t. the normalized predictions.
    pub fn loss(&self, kind: LossKind, pred: &Mat, target: &[f64]) -> (f64, Mat) {
        match kind {
            LossKind::Pinball => loss::pinball_loss_grad(pred, target, &self.cfg.quantiles),
            LossKind::L1Median => loss::l1_median_loss_grad(pred, target, self.cfg.median_index()),
        }
    }

    /// One window forward: normalize, patch, mask, encode, predict.
    ///
    /// With `rng` set, runs in train mode: the mask length is sampled and
    /// dropout is active. The returned loss is the pinball loss on the
    /// normalized scale.
    pub fn utp_forward(
        &self,
        window: &SeriesWindow,
        store: &ParameterStore,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(QuantileForecast, f64)> {
        let horizon = window.target.len();
        let (l_mask, mut dropout) = match rng {
            Some(r) => {
                let l = sample_mask_length(r, self.cfg.min_ctx_patches, self.cfg.max_ctx_patches);
                let seed = r.random::<u64>();
                (l, Some(ChaCha8Rng::seed_from_u64(seed)))
            }
            None => (self.inference_mask(window.context.len()), None),
        };
        let prepared = self.prepare(&window.context, &window.target, horizon, l_mask)?;
        let stats = prepared.stats;
        let trace = self.forward_prepared(prepared, store, dropout.as_mut())?;
        let loss = pinball_loss(&trace.pred, &trace.prepared.target, &self.cfg.quantiles);
        Ok((self.denormalize_forecast(&trace.pred, stats), loss))
    }

    /// Deterministic forecast of `horizon` steps (`horizon <= H_max`).
    pub fn forecast(&self, context: &[f64], horizon: usize, store: &ParameterStore) -> Result<QuantileForecast> {
        let prepared = self.prepare(context, &[], horizon, self.inference_mask(context.len()))?;
        let stats = prepared.stats;
        let trace = self.forward_prepared(prepared, store, None)?;
        Ok(self.denormalize_forecast(&trace.pred, stats))
    }

    /// Forecasts `total_horizon` steps by feeding the median path back as
    /// context, at most `H_max` steps per pass.
    pub fn rolling_forecast(&self, context: &[f64], total_horizon: usize, store: &ParameterStore) -> Result<QuantileForecast> {
        if total_horizon == 0 {
            return Err(Error::Horizon("total horizon must be positive".into()));
        }
        let cap = self.cfg.max_context();
        let mut ctx: Vec<f64> = context[context.len().saturating_sub(cap)..].to_vec();
        let nq = self.cfg.n_quantiles();
        let mut out = Vec::with_capacity(total_horizon * nq);
        let mut done = 0;
        while done < total_horizon {
            let h = (total_horizon - done).min(self.cfg.max_horizon());
            let f = self.forecast(&ctx, h, store)?;
            out.extend_from_slice(&f.values.data);
            ctx.extend(f.median());
            if ctx.len() > cap {
                ctx.drain(..ctx.len() - cap);
            }
            done += h;
        }
        Ok(QuantileForecast {
            values: Mat::from_vec(total_horizon, nq, out),
            quantiles: self.cfg.quantiles.clone(),
        })
    }
}

#[cfg(test)]
mod tests;
