//! Point and probabilistic forecast metrics, on the original scale.

use crate::backbone::{pinball_loss, QuantileForecast};
use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "prediction has {} points, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("no points to score".into()));
    }
    if let Some(i) = truth.iter().position(|t| !t.is_finite()) {
        return Err(Error::Metric(format!("non-finite truth at point {i}")));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean pinball loss of a quantile forecast against `truth`.
pub fn pinball(forecast: &QuantileForecast, truth: &[f64]) -> Result<f64> {
    if forecast.horizon() != truth.len() {
        return Err(Error::Metric(format!(
            "forecast horizon {} vs {} truth points",
            forecast.horizon(),
            truth.len()
        )));
    }
    Ok(pinball_loss(&forecast.values, truth, &forecast.quantiles))
}

/// Fraction of truth points inside `[q_lo, q_hi]`.
pub fn interval_coverage(forecast: &QuantileForecast, truth: &[f64], lo_q: f64, hi_q: f64) -> Result<f64> {
    let (inside, total) = coverage_counts(forecast, truth, lo_q, hi_q)?;
    Ok(inside as f64 / total as f64)
}

/// `(points inside [q_lo, q_hi], points)`, for pooling over many forecasts.
pub fn coverage_counts(forecast: &QuantileForecast, truth: &[f64], lo_q: f64, hi_q: f64) -> Result<(usize, usize)> {
    let (lo, hi) = coverage_columns(forecast, lo_q, hi_q)?;
    if forecast.horizon() != truth.len() || truth.is_empty() {
        return Err(Error::Metric(format!(
            "forecast horizon {} vs {} truth points",
            forecast.horizon(),
            truth.len()
        )));
    }
    let inside = truth
        .iter()
        .enumerate()
        .filter(|&(t, &y)| forecast.values[(t, lo)] <= y && y <= forecast.values[(t, hi)])
        .count();
    Ok((inside, truth.len()))
}

fn coverage_columns(forecast: &QuantileForecast, lo_q: f64, hi_q: f64) -> Result<(usize, usize)> {
    if lo_q >= hi_q {
        return Err(Error::Metric(format!("interval [{lo_q}, {hi_q}] is empty")));
    }
    let find = |q: f64| {
        forecast
            .level_index(q)
            .ok_or_else(|| Error::Metric(format!("quantile level {q} not in forecast {:?}", forecast.quantiles)))
    };
    Ok((find(lo_q)?, find(hi_q)?))
}

/// Fraction of horizon steps whose quantile row is not non-decreasing.
pub fn crossing_rate(forecast: &QuantileForecast) -> f64 {
    let v = &forecast.values;
    if v.rows == 0 {
        return 0.0;
    }
    let crossed = (0..v.rows)
        .filter(|&t| v.row(t).windows(2).any(|w| w[0] > w[1]))
        .count();
    crossed as f64 / v.rows as f64
}
