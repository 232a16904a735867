//! Context/target windows and chronological splits.

use std::ops::Range;

use super::STDataset;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// One univariate `(context, target)` pair with its timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
    pub context_timestamps: Vec<i64>,
    pub target_timestamps: Vec<i64>,
}

impl SeriesWindow {
    /// Builds a window from a series slice; timestamps are synthesized from
    /// `start_ts` and `stride` when the caller has none.
    pub fn from_slices(context: &[f64], target: &[f64], start_ts: i64, stride: i64) -> Self {
        let l = context.len() as i64;
        Self {
            context: context.to_vec(),
            target: target.to_vec(),
            context_timestamps: (0..l).map(|i| start_ts + i * stride).collect(),
            target_timestamps: (0..target.len() as i64).map(|i| start_ts + (l + i) * stride).collect(),
        }
    }

    pub fn stride(&self) -> i64 {
        match self.context_timestamps.as_slice() {
            [a, b, ..] => b - a,
            _ => 1,
        }
    }
}

/// A window's position inside a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub node: usize,
    /// First context step.
    pub start: usize,
    pub context_len: usize,
    pub horizon: usize,
}

impl WindowSpec {
    /// Steps touched by the window, `[start, start + L + H)`.
    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.context_len + self.horizon
    }

    pub fn materialize(&self, ds: &STDataset) -> SeriesWindow {
        let s = self.start;
        let m = s + self.context_len;
        let e = m + self.horizon;
        let row = ds.node(self.node);
        SeriesWindow {
            context: row[s..m].to_vec(),
            target: row[m..e].to_vec(),
            context_timestamps: ds.timestamps[s..m].to_vec(),
            target_timestamps: ds.timestamps[m..e].to_vec(),
        }
    }
}

/// All nodes of a panel over one `(context, target)` span.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelWindow {
    /// `N x L`
    pub context: Mat,
    /// `N x H`; zero columns when forecasting without ground truth.
    pub target: Mat,
    pub context_timestamps: Vec<i64>,
    pub stride: i64,
}

impl PanelWindow {
    /// The span `[start, start + l + h)` of every node in `ds`.
    pub fn from_dataset(ds: &STDataset, start: usize, l: usize, h: usize) -> Result<Self> {
        if start + l + h > ds.len() {
            return Err(Error::Windowing(format!(
                "panel window {start}+{l}+{h} exceeds series length {}",
                ds.len()
            )));
        }
        let n = ds.n_nodes();
        let m = start + l;
        Ok(Self {
            context: Mat::from_fn(n, l, |i, j| ds.values[(i, start + j)]),
            target: Mat::from_fn(n, h, |i, j| ds.values[(i, m + j)]),
            context_timestamps: ds.timestamps[start..m].to_vec(),
            stride: ds.freq_seconds,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.context.rows
    }

    pub fn horizon(&self) -> usize {
        self.target.cols
    }

    /// Node `i` as a univariate window.
    pub fn node_window(&self, i: usize) -> SeriesWindow {
        let last = self.context_timestamps.last().copied().unwrap_or(0);
        SeriesWindow {
            context: self.context.row(i).to_vec(),
            target: self.target.row(i).to_vec(),
            context_timestamps: self.context_timestamps.clone(),
            target_timestamps: (1..=self.target.cols as i64).map(|k| last + k * self.stride).collect(),
        }
    }

    /// Timestamp of step `idx` of the context; negative indices extrapolate
    /// backwards on the panel clock.
    pub fn context_time(&self, idx: i64) -> i64 {
        self.context_timestamps.first().copied().unwrap_or(0) + idx * self.stride
    }
}

/// Window start positions inside `range` for context `l`, horizon `h`.
pub fn window_starts(range: Range<usize>, l: usize, h: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Windowing("stride must be positive".into()));
    }
    let len = range.end.saturating_sub(range.start);
    if l + h > len {
        return Err(Error::Windowing(format!(
            "context {l} + horizon {h} exceeds available length {len}"
        )));
    }
    Ok((range.start..=range.end - l - h).step_by(stride).collect())
}

/// Every `(node, window)` pair over the whole panel, node-major.
pub fn window_iter(
    ds: &STDataset,
    l: usize,
    h: usize,
    stride: usize,
) -> Result<impl Iterator<Item = (usize, SeriesWindow)> + '_> {
    let specs = window_specs(ds, 0..ds.len(), l, h, stride)?;
    Ok(specs.into_iter().map(move |s| (s.node, s.materialize(ds))))
}

/// Window specs confined to `range`, node-major.
pub fn window_specs(
    ds: &STDataset,
    range: Range<usize>,
    l: usize,
    h: usize,
    stride: usize,
) -> Result<Vec<WindowSpec>> {
    let starts = window_starts(range, l, h, stride)?;
    Ok((0..ds.n_nodes())
        .flat_map(|node| {
            starts.iter().map(move |&start| WindowSpec {
                node,
                start,
                context_len: l,
                horizon: h,
            })
        })
        .collect())
}

/// Contiguous chronological train/val/test ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<Range<usize>> {
        match name {
            "train" => Some(self.train.clone()),
            "val" => Some(self.val.clone()),
            "test" => Some(self.test.clone()),
            _ => None,
        }
    }
}

pub fn split(t: usize, ratios: (f64, f64, f64)) -> Result<Splits> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::config("split.ratios", "every split ratio must be positive"));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config("split.ratios", "ratios must sum to 1"));
    }
    let b1 = (t as f64 * a).round() as usize;
    let b2 = (t as f64 * (a + b)).round() as usize;
    let s = Splits {
        train: 0..b1,
        val: b1..b2,
        test: b2..t,
    };
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(Error::config("split.ratios", format!("an empty split results for T={t}")));
    }
    Ok(s)
}
