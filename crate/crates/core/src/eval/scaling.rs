//! Empirical cost of the adapted forward as the node count grows.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::Adapter;
use crate::backbone::Backbone;
use crate::config::{AdapterConfig, LossKind};
use crate::data::synth::{daily_panel, DailyPanelSpec};
use crate::data::window::PanelWindow;
use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n_nodes: usize,
    /// Median wall time of one forward, seconds.
    pub wall_seconds: f64,
    /// Element count of the largest intermediate buffer.
    pub peak_intermediate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln time` against `ln N`.
    pub time_slope: f64,
    /// `peak[k + 1] / peak[k]` for consecutive rows.
    pub alloc_ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProbeSettings {
    pub n_list: Vec<usize>,
    pub context_len: usize,
    pub horizon: usize,
    pub repeats: usize,
    pub warmups: usize,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            n_list: vec![100, 200, 400, 800],
            context_len: 128,
            horizon: 64,
            repeats: 5,
            warmups: 2,
            seed: 0,
        }
    }
}

/// Times adapted inference for each node count.
///
/// `backbone_store` holds the backbone entries; a fresh adapter sized for
/// each `N` is attached to a copy of it.
pub fn scaling_probe(bb: &Backbone, backbone_store: &ParameterStore, adapter: &AdapterConfig, s: &ProbeSettings) -> Result<ScalingReport> {
    if s.n_list.len() < 3 || s.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("scale.n_list", "needs at least 3 strictly increasing node counts"));
    }
    if s.repeats == 0 {
        return Err(Error::config("scale.repeats", "must be positive"));
    }
    let mut rows = Vec::with_capacity(s.n_list.len());
    for &n in &s.n_list {
        let mut store = backbone_store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let cfg = AdapterConfig {
            n_nodes: n,
            ..adapter.clone()
        };
        let ad = Adapter::init(cfg, bb.cfg.d_model, &mut store, &mut rng)?;
        let steps = s.context_len + s.horizon;
        let spec = DailyPanelSpec {
            n_nodes: n,
            n_days: steps.div_ceil(288).max(1),
            seed: s.seed,
            ..DailyPanelSpec::default()
        };
        let ds = daily_panel(&spec);
        let mut panel = PanelWindow::from_dataset(&ds, 0, s.context_len, s.horizon)?;
        panel.target = crate::tensor::Mat::zeros(n, 0);
        let mut times = Vec::with_capacity(s.repeats);
        let mut peak = 0;
        for r in 0..s.warmups + s.repeats {
            let t0 = Instant::now();
            let out = ad.sta_forward(bb, &panel, &store, LossKind::L1Median, None)?;
            let dt = t0.elapsed().as_secs_f64();
            peak = out.peak_intermediate;
            if r >= s.warmups {
                times.push(dt);
            }
        }
        times.sort_by(f64::total_cmp);
        rows.push(ScalingRow {
            n_nodes: n,
            wall_seconds: times[times.len() / 2],
            peak_intermediate: peak,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n_nodes as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_seconds.ln()).collect();
    let alloc_ratios = rows
        .windows(2)
        .map(|w| w[1].peak_intermediate as f64 / w[0].peak_intermediate as f64)
        .collect();
    Ok(ScalingReport {
        time_slope: ls_slope(&xs, &ys),
        alloc_ratios,
        rows,
    })
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [3.0f64, 6.0, 12.0, 24.0].iter().map(|v| v.ln()).collect();
        assert!((ls_slope(&x, &y) - 1.0).abs() < 1e-12);
    }
}
