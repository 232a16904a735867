//! Quantile (pinball) and median-L1 objectives on `H x |Q|` predictions.

use crate::tensor::Mat;

/// Per-element pinball loss `max((q - 1)(y - p), q (y - p))`.
#[inline]
pub fn pinball(q: f64, y: f64, p: f64) -> f64 {
    let u = y - p;
    ((q - 1.0) * u).max(q * u)
}

/// Mean pinball loss over horizon steps and quantile levels.
pub fn pinball_loss(pred: &Mat, target: &[f64], quantiles: &[f64]) -> f64 {
    assert_eq!(pred.rows, target.len(), "prediction/target horizon mismatch");
    assert_eq!(pred.cols, quantiles.len(), "prediction/quantile count mismatch");
    let mut s = 0.0;
    for (t, &y) in target.iter().enumerate() {
        for (j, &q) in quantiles.iter().enumerate() {
            s += pinball(q, y, pred[(t, j)]);
        }
    }
    s / pred.len() as f64
}

pub fn pinball_loss_grad(pred: &Mat, target: &[f64], quantiles: &[f64]) -> (f64, Mat) {
    let loss = pinball_loss(pred, target, quantiles);
    let n = pred.len() as f64;
    let grad = Mat::from_fn(pred.rows, pred.cols, |t, j| {
        let q = quantiles[j];
        if target[t] - pred[(t, j)] > 0.0 {
            -q / n
        } else {
            (1.0 - q) / n
        }
    });
    (loss, grad)
}

/// Mean absolute error of the median column.
pub fn l1_median_loss(pred: &Mat, target: &[f64], median_col: usize) -> f64 {
    assert_eq!(pred.rows, target.len(), "prediction/target horizon mismatch");
    let s: f64 = target
        .iter()
        .enumerate()
        .map(|(t, y)| (y - pred[(t, median_col)]).abs())
        .sum();
    s / target.len() as f64
}

pub fn l1_median_loss_grad(pred: &Mat, target: &[f64], median_col: usize) -> (f64, Mat) {
    let loss = l1_median_loss(pred, target, median_col);
    let n = target.len() as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    for (t, &y) in target.iter().enumerate() {
        let r = pred[(t, median_col)] - y;
        grad[(t, median_col)] = if r > 0.0 {
            1.0 / n
        } else if r < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_elements() {
        assert_eq!(pinball(0.5, 2.0, 0.0), 1.0);
        assert!((pinball(0.9, 0.0, 1.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_iff_exact() {
        let q = [0.1, 0.5, 0.9];
        let pred = Mat::from_fn(4, 3, |t, _| t as f64);
        let y: Vec<f64> = (0..4).map(f64::from).collect();
        assert_eq!(pinball_loss(&pred, &y, &q), 0.0);
        assert_eq!(l1_median_loss(&pred, &y, 1), 0.0);
        let mut off = pred.clone();
        off[(2, 0)] += 0.5;
        assert!(pinball_loss(&off, &y, &q) > 0.0);
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let q = [0.1, 0.5, 0.9];
        let pred = Mat::from_fn(3, 3, |t, j| (t * 3 + j) as f64 * 0.13 - 0.4);
        let y = [0.05, 0.6, -0.2];
        let (_, g) = pinball_loss_grad(&pred, &y, &q);
        for idx in 0..pred.len() {
            let mut p = pred.clone();
            p.data[idx] += 1e-7;
            let mut m = pred.clone();
            m.data[idx] -= 1e-7;
            let fd = (pinball_loss(&p, &y, &q) - pinball_loss(&m, &y, &q)) / 2e-7;
            assert!((fd - g.data[idx]).abs() < 1e-6);
        }
    }
}
