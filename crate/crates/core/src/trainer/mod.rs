//! Optimization loops for pretraining and adaptation.

pub mod audit;
pub mod optim;
pub mod replay;
pub mod sta;
pub mod trace;
pub mod utp;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};

pub use optim::{clip_grad_norm, wsd_lr, Adam};
pub use replay::{cmr_partition, mix_batch, CmrStream, ReplayBuffer};
pub use trace::{TraceRecord, TraceWriter};

/// Validation callback: `(loss, named metrics)` for the current parameters.
pub type Validator<'a> = Box<dyn FnMut(&ParameterStore) -> Result<(f64, BTreeMap<String, f64>)> + 'a>;

/// Optional side channels of a training run.
#[derive(Default)]
pub struct Hooks<'a> {
    pub trace: Option<&'a mut TraceWriter>,
    pub validate: Option<Validator<'a>>,
    /// Validate every this many steps (and after the last); 0 means only
    /// after the last.
    pub eval_every: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per step, before the update.
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// `(step, loss, metrics)` per validation.
    pub validations: Vec<(usize, f64, BTreeMap<String, f64>)>,
}

impl TrainReport {
    /// Mean of the last `k` step losses.
    pub fn tail_loss(&self, k: usize) -> f64 {
        let n = self.losses.len();
        let t = &self.losses[n.saturating_sub(k)..];
        t.iter().sum::<f64>() / t.len() as f64
    }
}

/// Runs `total_steps` Adam updates on the gradients `batch` produces.
///
/// `batch(step, store, rng)` returns the mean batch loss and the matching
/// mean gradient.
pub(crate) fn run_loop<F>(
    store: &mut ParameterStore,
    cfg: &TrainConfig,
    trainable: &[bool],
    hooks: &mut Hooks,
    mut batch: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &ParameterStore, &mut ChaCha8Rng) -> Result<(f64, Gradients)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(store, cfg);
    let mut report = TrainReport::default();
    for step in 0..cfg.total_steps {
        let (loss, g) = batch(step, store, &mut rng)?;
        store.zero_grad();
        store.accumulate(&g, 1.0);
        let norm = clip_grad_norm(store, trainable, cfg.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm at step {step}")));
        }
        let lr = wsd_lr(step + 1, cfg);
        adam.step(store, lr, trainable);
        if !store.all_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
        }
        report.losses.push(loss);
        report.lrs.push(lr);
        report.grad_norms.push(norm);
        if let Some(t) = hooks.trace.as_deref_mut() {
            t.record(&TraceRecord {
                step,
                lr,
                loss,
                split: "train".into(),
                metrics: BTreeMap::new(),
            })?;
        }
        let last = step + 1 == cfg.total_steps;
        let due = hooks.eval_every > 0 && (step + 1) % hooks.eval_every == 0;
        if let (Some(v), true) = (hooks.validate.as_mut(), last || due) {
            let (vl, metrics) = v(store)?;
            if let Some(t) = hooks.trace.as_deref_mut() {
                t.record(&TraceRecord {
                    step,
                    lr,
                    loss: vl,
                    split: "val".into(),
                    metrics: metrics.clone(),
                })?;
            }
            report.validations.push((step, vl, metrics));
        }
    }
    if let Some(t) = hooks.trace.as_deref_mut() {
        t.flush()?;
    }
    Ok(report)
}

pub(crate) fn non_finite_loss(step: usize, item: usize, what: &str) -> Error {
    Error::Numeric(format!("non-finite loss at step {step}, batch item {item} ({what})"))
}
