//! Few-shot adaptation of a pretrained backbone to a multi-node panel.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{non_finite_loss, run_loop, CmrStream, Hooks, TrainReport};
use crate::adapter::Adapter;
use crate::backbone::Backbone;
use crate::config::TrainConfig;
use crate::data::window::{window_starts, PanelWindow};
use crate::data::STDataset;
use crate::error::{Error, Result};
use crate::params::ParameterStore;

/// Windowing and provenance settings of an adaptation run.
#[derive(Debug, Clone, PartialEq)]
pub struct StaSetup {
    pub context_len: usize,
    pub horizon: usize,
    /// Step between consecutive training windows.
    pub stride: usize,
    /// Trailing fraction of training windows to use, in `(0, 1]`.
    pub few_shot_frac: f64,
    /// Whether the backbone weights came from a pretraining checkpoint.
    pub backbone_loaded: bool,
    /// Permits adapting a randomly initialized backbone.
    pub from_scratch: bool,
}

impl Default for StaSetup {
    fn default() -> Self {
        Self {
            context_len: 128,
            horizon: 64,
            stride: 1,
            few_shot_frac: 0.1,
            backbone_loaded: false,
            from_scratch: false,
        }
    }
}

/// Which training windows the few-shot protocol kept.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShot {
    pub frac: f64,
    pub total: usize,
    /// Chronological window starts actually trained on.
    pub starts: Vec<usize>,
}

impl FewShot {
    pub fn describe(&self) -> String {
        format!(
            "few-shot selection: trailing {} of {} training windows (fraction {}), starts {}..={}",
            self.starts.len(),
            self.total,
            self.frac,
            self.starts.first().copied().unwrap_or(0),
            self.starts.last().copied().unwrap_or(0),
        )
    }
}

/// The trailing `round(frac * n)` (at least one) of `n` windows.
pub fn trailing_selection(n: usize, frac: f64) -> Result<Range<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::config("adapt.few_shot_frac", "must lie in (0, 1]"));
    }
    if n == 0 {
        return Err(Error::Windowing("no training windows to select from".into()));
    }
    let k = ((frac * n as f64).round() as usize).clamp(1, n);
    Ok(n - k..n)
}

pub fn few_shot_windows(train: Range<usize>, setup: &StaSetup) -> Result<FewShot> {
    let all = window_starts(train, setup.context_len, setup.horizon, setup.stride)?;
    let sel = trailing_selection(all.len(), setup.few_shot_frac)?;
    Ok(FewShot {
        frac: setup.few_shot_frac,
        total: all.len(),
        starts: all[sel].to_vec(),
    })
}

/// Adapts `store` (backbone plus adapter entries) on the trailing few-shot
/// windows of `train`.
///
/// Batches walk the selected windows chronologically; with replay enabled
/// the earliest `memory_frac` of them seed a reservoir that is mixed into
/// every later batch. The backbone is updated unless the adapter config
/// freezes it.
#[allow(clippy::too_many_arguments)]
pub fn train_sta(
    bb: &Backbone,
    ad: &Adapter,
    store: &mut ParameterStore,
    ds: &STDataset,
    train: Range<usize>,
    cfg: &TrainConfig,
    setup: &StaSetup,
    hooks: &mut Hooks,
) -> Result<(TrainReport, FewShot)> {
    cfg.validate("adapt")?;
    if !setup.backbone_loaded && !setup.from_scratch {
        return Err(Error::Transfer(
            "adaptation needs pretrained backbone weights; pass the scratch flag to adapt a random backbone".into(),
        ));
    }
    if ds.n_nodes() != ad.cfg.n_nodes {
        return Err(Error::AdapterShape(format!(
            "dataset has {} nodes, adapter expects {}",
            ds.n_nodes(),
            ad.cfg.n_nodes
        )));
    }
    let shots = few_shot_windows(train, setup)?;
    let mut stream = CmrStream::new(shots.starts.clone(), cfg.use_cmr, cfg.memory_frac, cfg.replace_ratio)?;
    let adapter_ids = ad.param_ids();
    let trainable: Vec<bool> = (0..store.len())
        .map(|k| !ad.cfg.backbone_frozen || adapter_ids.iter().any(|id| id.0 == k))
        .collect();
    let bs = cfg.batch_size;
    let dropout_on = bb.cfg.dropout > 0.0;
    let report = run_loop(store, cfg, &trainable, hooks, |step, store, rng| {
        let starts = stream.next_batch(bs, rng);
        let mut g = store.grad_buffer();
        let mut total = 0.0;
        for (item, &s) in starts.iter().enumerate() {
            let panel = PanelWindow::from_dataset(ds, s, setup.context_len, setup.horizon)?;
            let mut dropout = ChaCha8Rng::seed_from_u64(rng.random());
            let drop = if dropout_on { Some(&mut dropout) } else { None };
            let (out, trace) = ad.sta_forward_traced(bb, &panel, store, cfg.loss_kind, drop)?;
            let loss = out.loss.unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(non_finite_loss(step, item, &format!("panel starting at step {s}")));
            }
            ad.sta_backward(bb, &trace, store, &mut g);
            total += loss;
        }
        let inv = 1.0 / bs as f64;
        g.0.iter_mut().flatten().for_each(|v| *v *= inv);
        Ok((total * inv, g))
    })?;
    Ok((report, shots))
}
