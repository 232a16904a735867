//! Instance normalization and patch tokenization.

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Per-instance statistics computed over the context only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub fn scale(&self, eps: f64) -> f64 {
        self.sigma + eps
    }

    pub fn apply(&self, x: f64, eps: f64) -> f64 {
        (x - self.mu) / self.scale(eps)
    }

    pub fn invert(&self, z: f64, eps: f64) -> f64 {
        z * self.scale(eps) + self.mu
    }
}

/// `(x - mu) / (sigma + eps)` with population statistics of `context`.
pub fn instance_normalize(context: &[f64], eps: f64) -> Result<(Vec<f64>, NormStats)> {
    if context.is_empty() {
        return Err(Error::DataValidation("cannot normalize an empty context".into()));
    }
    if let Some(i) = context.iter().position(|x| !x.is_finite()) {
        return Err(Error::DataValidation(format!("non-finite context value at index {i}")));
    }
    let n = context.len() as f64;
    let mu = context.iter().sum::<f64>() / n;
    let var = context.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    let stats = NormStats { mu, sigma: var.sqrt() };
    if stats.scale(eps) <= 0.0 {
        // constant series with eps == 0
        return Ok((vec![0.0; context.len()], stats));
    }
    Ok((context.iter().map(|&x| stats.apply(x, eps)).collect(), stats))
}

/// Maps a normalized-scale matrix back to the original scale.
pub fn denormalize(normed: &Mat, stats: NormStats, eps: f64) -> Mat {
    let s = stats.scale(eps);
    Mat {
        rows: normed.rows,
        cols: normed.cols,
        data: normed.data.iter().map(|z| z * s + stats.mu).collect(),
    }
}

/// Splits `normed` into non-overlapping rows of `patch_len` steps.
pub fn patchify(normed: &[f64], patch_len: usize) -> Result<Mat> {
    if patch_len == 0 || normed.len() % patch_len != 0 {
        return Err(Error::Windowing(format!(
            "series length {} is not a multiple of patch_len {patch_len}",
            normed.len()
        )));
    }
    Ok(Mat::from_vec(normed.len() / patch_len, patch_len, normed.to_vec()))
}
