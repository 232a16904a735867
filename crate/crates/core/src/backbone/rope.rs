//! Partial rotary position encoding.
//!
//! Only the leading `rope_dims` coordinates of each head are rotated, pairwise
//! as `(2i, 2i + 1)` with frequency `base^(-2i / d_head)`. Those are the
//! fastest-rotating pairs of the usual geometric ladder; the remaining tail
//! is passed through untouched. Negative positions mark prefix tokens that
//! carry no temporal position and are left unrotated.

use crate::config::BackboneConfig;

/// Precomputed `cos`/`sin` values for positions `0..max_pos`.
#[derive(Debug, Clone)]
pub struct RopeTable {
    d_head: usize,
    pairs: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(cfg: &BackboneConfig, max_pos: usize) -> Self {
        let d_head = cfg.d_head();
        let pairs = cfg.rope_dims() / 2;
        let mut cos = Vec::with_capacity(max_pos * pairs);
        let mut sin = Vec::with_capacity(max_pos * pairs);
        for m in 0..max_pos {
            for i in 0..pairs {
                let theta = cfg.rope_base.powf(-2.0 * i as f64 / d_head as f64);
                let a = m as f64 * theta;
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        Self { d_head, pairs, cos, sin }
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Rotates one head vector in place; `inverse` applies the transpose.
    pub fn rotate(&self, v: &mut [f64], position: i64, inverse: bool) {
        debug_assert_eq!(v.len(), self.d_head);
        if position <= 0 {
            return;
        }
        let base = position as usize * self.pairs;
        for i in 0..self.pairs {
            let c = self.cos[base + i];
            let s = if inverse { -self.sin[base + i] } else { self.sin[base + i] };
            let (x0, x1) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = x0 * c - x1 * s;
            v[2 * i + 1] = x0 * s + x1 * c;
        }
    }

    /// Rotates every head of every row of a `n x d_model` buffer.
    pub fn rotate_rows(&self, data: &mut [f64], d_model: usize, positions: &[i64], inverse: bool) {
        for (row, &pos) in data.chunks_exact_mut(d_model).zip(positions) {
            for head in row.chunks_exact_mut(self.d_head) {
                self.rotate(head, pos, inverse);
            }
        }
    }
}

/// Rotates a single head vector at `position` (standalone form).
pub fn p_rope(vec: &[f64], position: i64, cfg: &BackboneConfig) -> Vec<f64> {
    let mut out = vec.to_vec();
    if position <= 0 {
        return out;
    }
    let d_head = cfg.d_head();
    for i in 0..cfg.rope_dims() / 2 {
        let theta = cfg.rope_base.powf(-2.0 * i as f64 / d_head as f64);
        let (s, c) = (position as f64 * theta).sin_cos();
        let (x0, x1) = (vec[2 * i], vec[2 * i + 1]);
        out[2 * i] = x0 * c - x1 * s;
        out[2 * i + 1] = x0 * s + x1 * c;
    }
    out
}
