//! Append-only JSON-lines training traces.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::config::KvDoc;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub split: String,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

pub struct TraceWriter {
    out: Box<dyn Write>,
}

impl TraceWriter {
    /// Starts a trace whose first line echoes the effective config.
    pub fn new(out: impl Write + 'static, config: &KvDoc) -> Result<Self> {
        let mut w = Self { out: Box::new(out) };
        writeln!(w.out, "{}", serde_json::json!({ "config": config.as_map() }))?;
        Ok(w)
    }

    pub fn record(&mut self, r: &TraceRecord) -> Result<()> {
        let line = serde_json::to_string(r).map_err(std::io::Error::from)?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
