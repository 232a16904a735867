//! Kernel-style synthetic series: random compositions of periodic, trend and
//! noise primitives, plus the panel fixtures used for adaptation.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::STDataset;
use crate::tensor::Mat;

/// A primitive generator with the ranges its parameters are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Sinusoid { amplitude: (f64, f64), period: (f64, f64) },
    LinearTrend { slope: (f64, f64) },
    /// Gaussian-smoothed white noise with unit-ish variance before scaling.
    SmoothNoise { scale: (f64, f64), length_scale: (f64, f64) },
    WhiteNoise { scale: (f64, f64) },
}

/// The default pool; periods are chosen so that a 512-step context holds
/// several cycles.
pub fn default_pool() -> Vec<Primitive> {
    vec![
        Primitive::Sinusoid {
            amplitude: (0.5, 2.0),
            period: (8.0, 128.0),
        },
        Primitive::Sinusoid {
            amplitude: (0.5, 2.0),
            period: (8.0, 128.0),
        },
        Primitive::LinearTrend { slope: (-0.01, 0.01) },
        Primitive::SmoothNoise {
            scale: (0.1, 0.5),
            length_scale: (2.0, 8.0),
        },
        Primitive::WhiteNoise { scale: (0.05, 0.3) },
    ]
}

/// A single generated primitive and, for sinusoids, its drawn period.
#[derive(Debug, Clone)]
pub struct Component {
    pub values: Vec<f64>,
    pub period: Option<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn sample_component(rng: &mut ChaCha8Rng, prim: &Primitive, length: usize) -> Component {
    match *prim {
        Primitive::Sinusoid { amplitude, period } => {
            let a = uniform(rng, amplitude);
            let p = uniform(rng, period);
            let phase = rng.random_range(0.0..2.0 * PI);
            Component {
                values: (0..length).map(|t| a * (2.0 * PI * t as f64 / p + phase).sin()).collect(),
                period: Some(p),
            }
        }
        Primitive::LinearTrend { slope } => {
            let s = uniform(rng, slope);
            let mid = length as f64 / 2.0;
            Component {
                values: (0..length).map(|t| s * (t as f64 - mid)).collect(),
                period: None,
            }
        }
        Primitive::SmoothNoise { scale, length_scale } => {
            let sc = uniform(rng, scale);
            let ls = uniform(rng, length_scale).max(1e-3);
            let half = (3.0 * ls).ceil() as isize;
            let raw: Vec<f64> = (0..length as isize + 2 * half)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let kernel: Vec<f64> = (-half..=half).map(|k| (-(k * k) as f64 / (2.0 * ls * ls)).exp()).collect();
            let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
            let values = (0..length)
                .map(|t| {
                    let s: f64 = kernel.iter().enumerate().map(|(j, k)| k * raw[t + j]).sum();
                    sc * s / norm
                })
                .collect();
            Component { values, period: None }
        }
        Primitive::WhiteNoise { scale } => {
            let sc = uniform(rng, scale);
            Component {
                values: (0..length)
                    .map(|_| sc * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect(),
                period: None,
            }
        }
    }
}

/// Composes 1 to 3 primitives drawn from `pool`, joined by random `+` / `*`.
pub fn kernel_synth(rng: &mut ChaCha8Rng, length: usize, pool: &[Primitive]) -> Vec<f64> {
    assert!(!pool.is_empty(), "primitive pool must not be empty");
    let k = rng.random_range(1..=3);
    let first = pool.choose(rng).expect("non-empty pool");
    let mut acc = sample_component(rng, first, length).values;
    for _ in 1..k {
        let prim = pool.choose(rng).expect("non-empty pool");
        let c = sample_component(rng, prim, length).values;
        if rng.random_bool(0.5) {
            acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        } else {
            // offset the multiplier so products keep a visible carrier
            acc.iter_mut().zip(&c).for_each(|(a, b)| *a *= 1.0 + b);
        }
    }
    let level = rng.random_range(-5.0..5.0);
    acc.iter_mut().for_each(|a| *a += level);
    acc
}

/// `n_series` independent kernel series laid out as a panel on a unit clock.
pub fn synth_corpus(seed: u64, n_series: usize, length: usize, pool: &[Primitive]) -> STDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_series * length);
    for _ in 0..n_series {
        data.extend(kernel_synth(&mut rng, length, pool));
    }
    STDataset::new(
        Mat::from_vec(n_series, length, data),
        (0..length as i64).collect(),
        (0..n_series).map(|i| format!("s{i}")).collect(),
        1,
    )
    .expect("synthetic panel is well formed")
}

/// Multi-node panel sharing a daily cycle with node-keyed amplitude, phase
/// and level, sampled every `freq_seconds`.
#[derive(Debug, Clone)]
pub struct DailyPanelSpec {
    pub n_nodes: usize,
    pub n_days: usize,
    pub freq_seconds: i64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DailyPanelSpec {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            n_days: 28,
            freq_seconds: 300,
            noise: 0.1,
            seed: 11,
        }
    }
}

pub fn daily_panel(spec: &DailyPanelSpec) -> STDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let steps_per_day = (86_400 / spec.freq_seconds) as usize;
    let t_len = steps_per_day * spec.n_days;
    // Monday 2024-01-01T00:00:00Z
    let t0 = 1_704_067_200i64;
    let mut values = Mat::zeros(spec.n_nodes, t_len);
    for i in 0..spec.n_nodes {
        let amp = 1.0 + 0.25 * (i % 5) as f64;
        let phase = 2.0 * PI * i as f64 / spec.n_nodes as f64;
        let level = 2.0 + (i % 3) as f64;
        let mut ar = 0.0;
        for t in 0..t_len {
            ar = 0.8 * ar + spec.noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let day_pos = (t % steps_per_day) as f64 / steps_per_day as f64;
            values[(i, t)] = level
                + amp * (2.0 * PI * day_pos + phase).sin()
                + 0.3 * amp * (4.0 * PI * day_pos + 2.0 * phase).sin()
                + ar;
        }
    }
    STDataset::new(
        values,
        (0..t_len as i64).map(|k| t0 + k * spec.freq_seconds).collect(),
        (0..spec.n_nodes).map(|i| format!("node{i}")).collect(),
        spec.freq_seconds,
    )
    .expect("fixture panel is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum();
        cov / var * n as f64 / (n - lag) as f64
    }

    #[test]
    fn zero_amplitude_sinusoid_is_constant() {
        let pool = [Primitive::Sinusoid {
            amplitude: (0.0, 0.0),
            period: (10.0, 20.0),
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = kernel_synth(&mut rng, 64, &pool);
        assert!(x.iter().all(|v| (v - x[0]).abs() < 1e-12));
    }

    #[test]
    fn sinusoid_autocorrelation_at_period() {
        let prim = Primitive::Sinusoid {
            amplitude: (0.5, 2.0),
            period: (8.0, 64.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c = sample_component(&mut rng, &prim, 1024);
            let p = c.period.unwrap();
            // integer lag nearest to the period
            let lag = p.round() as usize;
            assert!(autocorr(&c.values, lag) > 0.9, "period {p}");
        }
    }

    #[test]
    fn batch_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pool = default_pool();
        let mut non_flat = 0;
        for _ in 0..1000 {
            let x = kernel_synth(&mut rng, 128, &pool);
            assert!(x.iter().all(|v| v.is_finite()));
            let m = x.iter().sum::<f64>() / 128.0;
            let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 128.0).sqrt();
            if sd > 0.0 {
                non_flat += 1;
            }
        }
        assert!(non_flat >= 990);
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = synth_corpus(7, 4, 64, &default_pool());
        let b = synth_corpus(7, 4, 64, &default_pool());
        assert_eq!(a, b);
        assert_ne!(a, synth_corpus(8, 4, 64, &default_pool()));
    }

    #[test]
    fn daily_panel_shape() {
        let ds = daily_panel(&DailyPanelSpec {
            n_nodes: 3,
            n_days: 2,
            ..Default::default()
        });
        assert_eq!((ds.n_nodes(), ds.len()), (3, 576));
        assert_eq!(ds.freq_seconds, 300);
    }
}
