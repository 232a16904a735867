//! Metric reports as JSON lines and plot-ready CSV.

use std::io::Write;

use serde::Serialize;

use crate::config::KvDoc;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub metric: String,
    pub dataset: String,
    pub horizon: usize,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(metric: &str, dataset: &str, horizon: usize, value: f64) -> Self {
        Self {
            metric: metric.to_string(),
            dataset: dataset.to_string(),
            horizon,
            value,
        }
    }
}

/// One JSON object per line; the first line echoes the effective config.
pub fn write_jsonl(mut w: impl Write, config: &KvDoc, records: &[MetricRecord]) -> Result<()> {
    writeln!(w, "{}", serde_json::json!({ "config": config.as_map() }))?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).map_err(std::io::Error::from)?)?;
    }
    Ok(())
}

/// Columns `metric,dataset,horizon,value`.
pub fn write_csv(w: impl Write, records: &[MetricRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r).map_err(std::io::Error::from)?;
    }
    out.flush()?;
    Ok(())
}
