//! Scoring collections of forecasts over many windows and nodes.

use std::collections::BTreeMap;

use crate::adapter::Adapter;
use crate::backbone::{Backbone, QuantileForecast};
use crate::config::LossKind;
use crate::data::window::{PanelWindow, SeriesWindow};
use crate::data::STDataset;
use crate::error::{Error, Result};
use crate::params::ParameterStore;

use super::baselines::persistence;
use super::metrics::{coverage_counts, crossing_rate, mae, pinball, rmse};

/// Forecasts paired with their ground truth.
#[derive(Debug, Clone, Default)]
pub struct ForecastSet {
    pub forecasts: Vec<QuantileForecast>,
    pub truths: Vec<Vec<f64>>,
}

impl ForecastSet {
    pub fn push(&mut self, f: QuantileForecast, truth: Vec<f64>) {
        self.forecasts.push(f);
        self.truths.push(truth);
    }

    pub fn len(&self) -> usize {
        self.forecasts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forecasts.is_empty()
    }

    fn flat_truth(&self) -> Vec<f64> {
        self.truths.iter().flatten().copied().collect()
    }

    fn flat_median(&self) -> Vec<f64> {
        self.forecasts.iter().flat_map(|f| f.median()).collect()
    }

    /// MAE of the median path over every point.
    pub fn median_mae(&self) -> Result<f64> {
        mae(&self.flat_median(), &self.flat_truth())
    }

    /// MAE, RMSE, pinball, `(lo, hi)` coverage and crossing rate, all pooled
    /// over every point.
    pub fn summarize(&self, lo: f64, hi: f64) -> Result<BTreeMap<String, f64>> {
        if self.is_empty() {
            return Err(Error::Metric("no forecasts to score".into()));
        }
        let truth = self.flat_truth();
        let med = self.flat_median();
        let mut pin = 0.0;
        let (mut inside, mut total) = (0, 0);
        let mut crossings = 0.0;
        let mut steps = 0usize;
        for (f, t) in self.forecasts.iter().zip(&self.truths) {
            pin += pinball(f, t)? * t.len() as f64;
            let (a, b) = coverage_counts(f, t, lo, hi)?;
            inside += a;
            total += b;
            crossings += crossing_rate(f) * f.horizon() as f64;
            steps += f.horizon();
        }
        let mut m = BTreeMap::new();
        m.insert("mae".into(), mae(&med, &truth)?);
        m.insert("rmse".into(), rmse(&med, &truth)?);
        m.insert("pinball".into(), pin / truth.len() as f64);
        m.insert(format!("coverage_{lo}_{hi}"), inside as f64 / total as f64);
        m.insert("crossing_rate".into(), crossings / steps as f64);
        Ok(m)
    }
}

/// Per-node backbone forecasts for panels starting at each of `starts`.
pub fn backbone_forecasts(
    bb: &Backbone,
    store: &ParameterStore,
    ds: &STDataset,
    starts: &[usize],
    l: usize,
    h: usize,
) -> Result<ForecastSet> {
    let mut set = ForecastSet::default();
    for &s in starts {
        let pw = PanelWindow::from_dataset(ds, s, l, h)?;
        for i in 0..pw.n_nodes() {
            let w = pw.node_window(i);
            let f = if h <= bb.cfg.max_horizon() {
                bb.forecast(&w.context, h, store)?
            } else {
                bb.rolling_forecast(&w.context, h, store)?
            };
            set.push(f, w.target);
        }
    }
    Ok(set)
}

/// Adapted forecasts for panels starting at each of `starts`.
pub fn adapted_forecasts(
    bb: &Backbone,
    ad: &Adapter,
    store: &ParameterStore,
    ds: &STDataset,
    starts: &[usize],
    l: usize,
    h: usize,
) -> Result<ForecastSet> {
    let mut set = ForecastSet::default();
    for &s in starts {
        let pw = PanelWindow::from_dataset(ds, s, l, h)?;
        let out = ad.sta_forward(bb, &pw, store, LossKind::L1Median, None)?;
        for (i, f) in out.forecasts.into_iter().enumerate() {
            set.push(f, pw.target.row(i).to_vec());
        }
    }
    Ok(set)
}

/// Backbone forecasts for standalone univariate windows.
pub fn window_forecasts(bb: &Backbone, store: &ParameterStore, windows: &[SeriesWindow]) -> Result<ForecastSet> {
    let mut set = ForecastSet::default();
    for w in windows {
        set.push(bb.forecast(&w.context, w.target.len(), store)?, w.target.clone());
    }
    Ok(set)
}

/// Pooled MAE of the persistence baseline over `windows`.
pub fn persistence_mae(windows: &[SeriesWindow]) -> Result<f64> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for w in windows {
        pred.extend(persistence(&w.context, w.target.len())?);
        truth.extend_from_slice(&w.target);
    }
    mae(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    #[test]
    fn pooled_summary_weights_points_equally() {
        let q = vec![0.1, 0.5, 0.9];
        let f = |rows: &[[f64; 3]]| QuantileForecast {
            values: Mat::from_vec(rows.len(), 3, rows.iter().flatten().copied().collect()),
            quantiles: q.clone(),
        };
        let mut set = ForecastSet::default();
        set.push(f(&[[0.0, 1.0, 2.0]]), vec![1.0]);
        set.push(f(&[[0.0, 1.0, 2.0], [2.0, 1.0, 0.0], [0.0, 1.0, 2.0]]), vec![4.0, 1.0, 1.0]);
        let m = set.summarize(0.1, 0.9).unwrap();
        assert_eq!(m["mae"], 0.75);
        assert_eq!(m["rmse"], 1.5);
        assert_eq!(m["coverage_0.1_0.9"], 0.5);
        assert_eq!(m["crossing_rate"], 0.25);
        assert!(ForecastSet::default().summarize(0.1, 0.9).is_err());
    }

    #[test]
    fn persistence_pools_points() {
        let w = vec![
            SeriesWindow::from_slices(&[1.0, 2.0], &[2.0, 4.0], 0, 1),
            SeriesWindow::from_slices(&[5.0], &[5.0, 5.0], 0, 1),
        ];
        assert_eq!(persistence_mae(&w).unwrap(), 0.5);
    }
}
