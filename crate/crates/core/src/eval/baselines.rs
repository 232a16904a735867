//! Naive yardsticks: persistence and calendar-cell historical average.

use std::collections::HashMap;
use std::ops::Range;

use crate::data::calendar::{calendar_features, CalendarCycle};
use crate::data::STDataset;
use crate::error::{Error, Result};

/// Repeats the last context value `horizon` times.
pub fn persistence(context: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let last = *context
        .last()
        .ok_or_else(|| Error::Windowing("persistence needs a non-empty context".into()))?;
    Ok(vec![last; horizon])
}

/// Per-node mean of the training values in each calendar cell.
#[derive(Debug, Clone)]
pub struct HistoricalAverage {
    cycles: Vec<CalendarCycle>,
    cells: Vec<HashMap<Vec<usize>, f64>>,
    global: Vec<f64>,
}

impl HistoricalAverage {
    pub fn fit(ds: &STDataset, range: Range<usize>, cycles: &[CalendarCycle]) -> Result<Self> {
        if range.is_empty() || range.end > ds.len() {
            return Err(Error::Windowing(format!(
                "fit range {range:?} invalid for series length {}",
                ds.len()
            )));
        }
        let keys: Vec<Vec<usize>> = ds.timestamps[range.clone()]
            .iter()
            .map(|&ts| calendar_features(ts, cycles).0)
            .collect();
        let mut cells = Vec::with_capacity(ds.n_nodes());
        let mut global = Vec::with_capacity(ds.n_nodes());
        for i in 0..ds.n_nodes() {
            let row = &ds.node(i)[range.clone()];
            let mut acc: HashMap<Vec<usize>, (f64, usize)> = HashMap::new();
            for (k, &v) in keys.iter().zip(row) {
                let e = acc.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
            cells.push(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect());
            global.push(row.iter().sum::<f64>() / row.len() as f64);
        }
        Ok(Self {
            cycles: cycles.to_vec(),
            cells,
            global,
        })
    }

    /// Forecast for `node` at each timestamp; unseen cells fall back to the
    /// node's overall training mean.
    pub fn predict(&self, node: usize, timestamps: &[i64]) -> Vec<f64> {
        timestamps
            .iter()
            .map(|&ts| {
                let key = calendar_features(ts, &self.cycles).0;
                self.cells[node].get(&key).copied().unwrap_or(self.global[node])
            })
            .collect()
    }
}
