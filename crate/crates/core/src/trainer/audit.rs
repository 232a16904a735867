//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, ADAPTER_PREFIX};
use crate::backbone::Backbone;
use crate::config::{AdapterConfig, BackboneConfig, LossKind};
use crate::data::calendar::CalendarCycle;
use crate::data::window::{PanelWindow, SeriesWindow};
use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::Mat;

/// Gradients smaller than this in both forms compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub tolerance: f64,
    pub instances: usize,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            instances: 0,
            entries: Vec::new(),
        }
    }

    pub fn violators(&self) -> Vec<&AuditEntry> {
        self.entries.iter().filter(|e| !(e.max_rel_err < self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.violators().is_empty()
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    /// Folds another report in, keeping the per-name maximum.
    pub fn merge(&mut self, other: AuditReport) {
        self.instances += other.instances;
        for e in other.entries {
            match self.entries.iter_mut().find(|m| m.name == e.name) {
                Some(m) => {
                    m.max_rel_err = m.max_rel_err.max(e.max_rel_err);
                    m.checked += e.checked;
                }
                None => self.entries.push(e),
            }
        }
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    let e = (analytic - numeric).abs() / scale;
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar in `store`.
pub fn grad_audit<F>(store: &ParameterStore, analytic: &Gradients, mut loss: F, step: f64, tolerance: f64) -> Result<AuditReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let mut work = store.clone();
    let mut entries = Vec::with_capacity(store.len());
    for (k, e) in store.entries().iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..e.values.len() {
            let orig = e.values[j];
            work.entries_mut()[k].values[j] = orig + step;
            let up = loss(&work)?;
            work.entries_mut()[k].values[j] = orig - step;
            let down = loss(&work)?;
            work.entries_mut()[k].values[j] = orig;
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic.0[k][j], fd));
        }
        entries.push(AuditEntry {
            name: e.name.clone(),
            max_rel_err: worst,
            checked: e.values.len(),
        });
    }
    Ok(AuditReport {
        tolerance,
        instances: 1,
        entries,
    })
}

pub fn tiny_backbone_config() -> BackboneConfig {
    BackboneConfig {
        d_model: 8,
        d_ff: 16,
        n_layers: 1,
        n_heads: 1,
        patch_len: 4,
        max_ctx_patches: 4,
        max_fut_patches: 2,
        min_ctx_patches: 1,
        quantiles: vec![0.1, 0.5, 0.9],
        rope_fraction: 0.5,
        dropout: 0.0,
        ..BackboneConfig::default()
    }
}

pub fn tiny_adapter_config() -> AdapterConfig {
    AdapterConfig {
        n_nodes: 3,
        id_dim: 4,
        calendar_cycles: vec![CalendarCycle::TimeOfDay, CalendarCycle::DayOfWeek],
        n_prompts: 2,
        prompt_rank: 2,
        n_prototypes: 2,
        max_lag: 2,
        ..AdapterConfig::default()
    }
}

/// Residuals closer than this to a loss kink trigger a resample.
const KINK_MARGIN: f64 = 1e-2;

/// Audits the tiny backbone (pinball, single series) and the tiny adapted
/// model (median L1, whole panel) over `instances` seeded draws.
///
/// Weights are spread away from their init so activations are non-trivial;
/// draws with a residual within [`KINK_MARGIN`] of zero are skipped since
/// central differences straddle the kink there.
pub fn tiny_model_audit(instances: usize, seed: u64, step: f64, tolerance: f64) -> Result<AuditReport> {
    let mut report = AuditReport::new(tolerance);
    let mut s = seed;
    let mut attempts = 0;
    while report.instances < instances {
        attempts += 1;
        if attempts > instances * 50 + 50 {
            return Err(Error::Numeric("could not draw audit instances away from loss kinks".into()));
        }
        s = s.wrapping_add(1);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut store = ParameterStore::new(s);
        let bb = Backbone::init(tiny_backbone_config(), &mut store, &mut rng)?;
        let ad = Adapter::init(tiny_adapter_config(), bb.cfg.d_model, &mut store, &mut rng)?;
        for e in store.entries_mut() {
            if e.name.ends_with("gamma") && !e.name.starts_with(ADAPTER_PREFIX) {
                continue;
            }
            for v in e.values.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let t0 = 1_704_067_200;
        let panel = PanelWindow {
            context: Mat::from_fn(3, 16, |_, _| rng.random_range(-2.0..2.0)),
            target: Mat::from_fn(3, 4, |_, _| rng.random_range(-2.0..2.0)),
            context_timestamps: (0..16).map(|k| t0 + 1800 * k).collect(),
            stride: 1800,
        };

        // backbone alone, pinball loss
        let w: SeriesWindow = panel.node_window(0);
        let prepared = bb.prepare(&w.context, &w.target, 4, bb.inference_mask(16))?;
        let trace = bb.forward_prepared(prepared, &store, None)?;
        let bb_margin = (0..4)
            .flat_map(|t| (0..3).map(move |q| (t, q)))
            .map(|(t, q)| (trace.prepared.target[t] - trace.pred[(t, q)]).abs())
            .fold(f64::MAX, f64::min);

        // adapted panel, median L1
        let (out, sta) = ad.sta_forward_traced(&bb, &panel, &store, LossKind::L1Median, None)?;
        let med = bb.cfg.median_index();
        let sta_margin = sta
            .nodes
            .iter()
            .zip(&out.forecasts)
            .flat_map(|(n, f)| {
                let st = n.prepared.stats;
                (0..4).map(move |t| (n.prepared.target[t] - st.apply(f.values[(t, med)], bb.cfg.eps)).abs())
            })
            .fold(f64::MAX, f64::min);
        if bb_margin < KINK_MARGIN || sta_margin < KINK_MARGIN {
            continue;
        }

        let (_, d_pred) = bb.loss(LossKind::Pinball, &trace.pred, &trace.prepared.target);
        let mut g = store.grad_buffer();
        bb.backward(&trace, &d_pred, &store, &mut g);
        let utp = grad_audit(&store, &g, |p| Ok(bb.utp_forward(&w, p, None)?.1), step, tolerance)?;

        let mut g = store.grad_buffer();
        ad.sta_backward(&bb, &sta, &store, &mut g);
        let adapted = grad_audit(
            &store,
            &g,
            |p| {
                ad.sta_forward(&bb, &panel, p, LossKind::L1Median, None)?
                    .loss
                    .ok_or_else(|| Error::Numeric("panel without targets".into()))
            },
            step,
            tolerance,
        )?;
        let mut both = utp;
        both.merge(adapted);
        both.instances = 1;
        report.merge(both);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn linear_l1_model_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = (1.7, 0.4);
        let mut store = ParameterStore::new(0);
        let w = store.add("w", &[1], Init::Constant(0.9), &mut rng).unwrap();
        let loss = |s: &ParameterStore| Ok((s.values(w)[0] * x - y).abs());
        let mut g = store.grad_buffer();
        let r: f64 = 0.9 * x - y;
        g.0[0][0] = r.signum() * x;
        let rep = grad_audit(&store, &g, loss, 1e-4, 1e-3).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.worst() < 1e-9);

        g.0[0][0] = -x;
        let rep = grad_audit(&store, &g, loss, 1e-4, 1e-3).unwrap();
        assert_eq!(rep.violators().len(), 1);
        assert_eq!(rep.violators()[0].name, "w");
    }

    #[test]
    fn zero_parameter_model_gives_an_empty_report() {
        let store = ParameterStore::new(0);
        let rep = grad_audit(&store, &store.grad_buffer(), |_| Ok(1.0), 1e-4, 1e-3).unwrap();
        assert!(rep.entries.is_empty() && rep.passed());
    }

    #[test]
    fn tiny_models_pass_a_short_audit() {
        let rep = tiny_model_audit(2, 7, 1e-4, 1e-3).unwrap();
        assert_eq!(rep.instances, 2);
        assert!(rep.passed(), "violators: {:?}", rep.violators());
        assert!(rep.entries.iter().any(|e| e.name.starts_with(ADAPTER_PREFIX)));
    }
}
