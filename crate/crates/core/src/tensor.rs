//! Dense row-major matrices and the handful of kernels the model needs.

use std::ops::{Index, IndexMut};

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Adds `bias` to every row.
    pub fn add_row_vec(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for r in self.data.chunks_exact_mut(self.cols) {
            for (x, b) in r.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    /// Column sums accumulated into `out`.
    pub fn accumulate_col_sums(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        for r in self.data.chunks_exact(self.cols) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` over raw row-major buffers.
///
/// `a` is `m x k` after the optional transpose, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // stored a is m x k (row-major, strides k,1) or k x m when transposed.
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe in-bounds layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a * b`
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, 1.0, &a.data, false, &b.data, false, 0.0, &mut c.data);
    c
}

/// `a^T * b`
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimension");
    let mut c = Mat::zeros(a.cols, b.cols);
    gemm(a.cols, a.rows, b.cols, 1.0, &a.data, true, &b.data, false, 0.0, &mut c.data);
    c
}

/// `a * b^T`
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimension");
    let mut c = Mat::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, 1.0, &a.data, false, &b.data, true, 0.0, &mut c.data);
    c
}

/// `acc += a^T * b`, the usual weight-gradient update.
pub fn accumulate_tn(acc: &mut [f64], a: &Mat, b: &Mat) {
    assert_eq!(a.rows, b.rows);
    gemm(a.cols, a.rows, b.cols, 1.0, &a.data, true, &b.data, false, 1.0, acc);
}

/// `x * w + bias` with `w` stored as a flat `in x out` buffer.
pub fn linear(x: &Mat, w: &[f64], bias: &[f64]) -> Mat {
    let out = bias.len();
    let mut y = Mat::zeros(x.rows, out);
    gemm(x.rows, x.cols, out, 1.0, &x.data, false, w, false, 0.0, &mut y.data);
    y.add_row_vec(bias);
    y
}

/// `x * w` with `w` stored as a flat `in x out` buffer.
pub fn linear_nobias(x: &Mat, w: &[f64], out: usize) -> Mat {
    let mut y = Mat::zeros(x.rows, out);
    gemm(x.rows, x.cols, out, 1.0, &x.data, false, w, false, 0.0, &mut y.data);
    y
}

/// Backward of [`linear`]: accumulates weight/bias grads and returns `dx`.
pub fn linear_backward(x: &Mat, w: &[f64], dy: &Mat, dw: &mut [f64], db: &mut [f64]) -> Mat {
    accumulate_tn(dw, x, dy);
    dy.accumulate_col_sums(db);
    let mut dx = Mat::zeros(x.rows, x.cols);
    gemm(dy.rows, dy.cols, x.cols, 1.0, &dy.data, false, w, true, 0.0, &mut dx.data);
    dx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Backward of a row softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64], out: &mut [f64]) {
    let s = dot(p, dp);
    for ((o, pi), dpi) in out.iter_mut().zip(p).zip(dp) {
        *o = pi * (dpi - s);
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows, b.cols, |i, j| (0..a.cols).map(|k| a[(i, k)] * b[(k, j)]).sum())
    }

    #[test]
    fn matmul_variants_agree_with_loops() {
        let a = Mat::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.1 - 0.7);
        let b = Mat::from_fn(5, 4, |i, j| ((i + 2 * j) % 7) as f64 - 3.0);
        let c = naive(&a, &b);
        assert!(matmul(&a, &b).max_abs_diff(&c) < 1e-12);
        assert!(matmul_tn(&a.transpose(), &b).max_abs_diff(&c) < 1e-12);
        assert!(matmul_nt(&a, &b.transpose()).max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = vec![1000.0, 1001.0, -5.0];
        softmax_in_place(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
