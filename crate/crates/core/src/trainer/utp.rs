//! Univariate pretraining of the backbone on pinball (or median L1) loss.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{non_finite_loss, run_loop, CmrStream, Hooks, TrainReport};
use crate::backbone::{sample_mask_length, Backbone};
use crate::config::TrainConfig;
use crate::data::window::{SeriesWindow, WindowSpec};
use crate::data::STDataset;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};

/// Uniformly sampled `(node, start)` windows over a step range.
#[derive(Debug, Clone)]
pub struct WindowPool<'a> {
    ds: &'a STDataset,
    range: Range<usize>,
    context_len: usize,
    horizon: usize,
}

impl<'a> WindowPool<'a> {
    pub fn new(ds: &'a STDataset, range: Range<usize>, context_len: usize, horizon: usize) -> Result<Self> {
        if range.end > ds.len() || range.end.saturating_sub(range.start) < context_len + horizon {
            return Err(Error::Windowing(format!(
                "range {range:?} cannot hold a {context_len}+{horizon} window (series length {})",
                ds.len()
            )));
        }
        if ds.n_nodes() == 0 {
            return Err(Error::Windowing("window pool over an empty corpus".into()));
        }
        Ok(Self {
            ds,
            range,
            context_len,
            horizon,
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SeriesWindow {
        let node = rng.random_range(0..self.ds.n_nodes());
        let last = self.range.end - self.context_len - self.horizon;
        let start = rng.random_range(self.range.start..=last);
        WindowSpec {
            node,
            start,
            context_len: self.context_len,
            horizon: self.horizon,
        }
        .materialize(self.ds)
    }
}

/// Where pretraining windows come from.
pub enum UtpData<'a> {
    /// IID draws from a pool.
    Pool(WindowPool<'a>),
    /// A fixed chronological stream, consumed in order and wrapped; replay
    /// applies when the config enables it.
    Stream(&'a [SeriesWindow]),
}

/// Loss and gradient of one window; `rng` drives the mask and dropout.
pub fn window_grad(
    bb: &Backbone,
    store: &ParameterStore,
    cfg: &TrainConfig,
    w: &SeriesWindow,
    rng: &mut ChaCha8Rng,
    grads: &mut Gradients,
) -> Result<f64> {
    let c = &bb.cfg;
    let l_mask = if cfg.random_mask {
        sample_mask_length(rng, c.min_ctx_patches, c.max_ctx_patches)
    } else {
        bb.inference_mask(w.context.len())
    };
    let mut dropout = ChaCha8Rng::seed_from_u64(rng.random());
    let prepared = bb.prepare(&w.context, &w.target, w.target.len(), l_mask)?;
    let trace = bb.forward_prepared(prepared, store, Some(&mut dropout))?;
    let (loss, d_pred) = bb.loss(cfg.loss_kind, &trace.pred, &trace.prepared.target);
    if loss.is_finite() {
        bb.backward(&trace, &d_pred, store, grads);
    }
    Ok(loss)
}

/// Pretrains every entry in `store` (which must hold the backbone).
pub fn train_utp(
    bb: &Backbone,
    store: &mut ParameterStore,
    cfg: &TrainConfig,
    data: UtpData,
    hooks: &mut Hooks,
) -> Result<TrainReport> {
    cfg.validate("pretrain")?;
    let trainable = vec![true; store.len()];
    let bs = cfg.batch_size;
    let mut stream = match &data {
        UtpData::Stream(ws) => Some(CmrStream::new(
            (0..ws.len()).collect::<Vec<_>>(),
            cfg.use_cmr,
            cfg.memory_frac,
            cfg.replace_ratio,
        )?),
        UtpData::Pool(_) => None,
    };
    run_loop(store, cfg, &trainable, hooks, |step, store, rng| {
        let batch: Vec<SeriesWindow> = match (&data, stream.as_mut()) {
            (UtpData::Pool(p), _) => (0..bs).map(|_| p.sample(rng)).collect(),
            (UtpData::Stream(ws), Some(s)) => s.next_batch(bs, rng).into_iter().map(|i| ws[i].clone()).collect(),
            (UtpData::Stream(_), None) => unreachable!("stream source always has a cursor"),
        };
        let mut g = store.grad_buffer();
        let mut total = 0.0;
        for (item, w) in batch.iter().enumerate() {
            let loss = window_grad(bb, store, cfg, w, rng, &mut g)?;
            if !loss.is_finite() {
                return Err(non_finite_loss(step, item, "pretraining window"));
            }
            total += loss;
        }
        let inv = 1.0 / bs as f64;
        g.0.iter_mut().flatten().for_each(|v| *v *= inv);
        Ok((total * inv, g))
    })
}

/// Mean eval-mode pinball loss (normalized scale) over `windows`.
pub fn mean_window_loss(bb: &Backbone, store: &ParameterStore, windows: &[SeriesWindow]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        total += bb.utp_forward(w, store, None)?.1;
    }
    Ok(total / windows.len() as f64)
}
