//! Panels, synthetic series, CSV ingestion and windowing.

pub mod calendar;
pub mod csv;
pub mod synth;
pub mod window;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// An `N x T` panel of univariate node series on a shared, evenly spaced clock.
#[derive(Debug, Clone, PartialEq)]
pub struct STDataset {
    pub values: Mat,
    pub timestamps: Vec<i64>,
    pub node_ids: Vec<String>,
    pub freq_seconds: i64,
}

impl STDataset {
    pub fn new(values: Mat, timestamps: Vec<i64>, node_ids: Vec<String>, freq_seconds: i64) -> Result<Self> {
        if values.rows != node_ids.len() {
            return Err(Error::DataValidation(format!(
                "{} value rows but {} node ids",
                values.rows,
                node_ids.len()
            )));
        }
        if values.cols != timestamps.len() {
            return Err(Error::DataValidation(format!(
                "{} value columns but {} timestamps",
                values.cols,
                timestamps.len()
            )));
        }
        if freq_seconds <= 0 {
            return Err(Error::DataValidation("frequency must be positive".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] - w[0] != freq_seconds) {
            return Err(Error::DataValidation(format!(
                "timestamp stride violated between steps {i} and {}",
                i + 1
            )));
        }
        if !values.all_finite() {
            return Err(Error::DataValidation("panel contains non-finite values".into()));
        }
        Ok(Self {
            values,
            timestamps,
            node_ids,
            freq_seconds,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows
    }

    pub fn len(&self) -> usize {
        self.values.cols
    }

    pub fn is_empty(&self) -> bool {
        self.values.cols == 0
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}
