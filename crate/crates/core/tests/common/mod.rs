//! Fixtures shared by the integration and acceptance targets.

use std::f64::consts::TAU;

use factost::data::window::WindowSpec;
use factost::tensor::Mat;
use factost::trainer::audit::tiny_backbone_config;
use factost::trainer::utp::{mean_window_loss, train_utp, UtpData, WindowPool};
use factost::trainer::Hooks;
use factost::{Backbone, ParameterStore, STDataset, SeriesWindow, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` series of length `len` drawn from `shape(t, period, phase)`.
pub fn panel(n: usize, len: usize, seed: u64, shape: fn(f64, f64, f64) -> f64) -> STDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Mat::zeros(n, len);
    for i in 0..n {
        let period = rng.random_range(6.0..12.0);
        let phase = rng.random_range(0.0..1.0);
        let amp = rng.random_range(0.5..2.0);
        let level = rng.random_range(-1.0..1.0);
        for t in 0..len {
            values[(i, t)] = level + amp * shape(t as f64, period, phase);
        }
    }
    STDataset::new(values, (0..len as i64).collect(), (0..n).map(|i| i.to_string()).collect(), 1).unwrap()
}

pub fn sine(t: f64, period: f64, phase: f64) -> f64 {
    (TAU * (t / period + phase)).sin()
}

/// A rising ramp with a small periodic ripple.
pub fn ramp(t: f64, period: f64, phase: f64) -> f64 {
    t / period + 0.1 * sine(t, 3.0, phase)
}

/// Ramp contexts whose continuations are mirrored about the level, so the
/// same context maps to the opposite future seen in phase 1.
pub fn flipped_windows(n: usize, seed: u64) -> Vec<SeriesWindow> {
    let ds = panel(n, 24, seed, ramp);
    (0..n)
        .map(|i| {
            let row = ds.node(i);
            let level = row.iter().sum::<f64>() / 24.0;
            let target: Vec<f64> = row[16..].iter().map(|v| 2.0 * level - v).collect();
            SeriesWindow::from_slices(&row[..16], &target, 0, 1)
        })
        .collect()
}

/// One `16 + 8` window per series, starting at `start`.
pub fn windows(ds: &STDataset, start: usize) -> Vec<SeriesWindow> {
    (0..ds.n_nodes())
        .map(|node| WindowSpec { node, start, context_len: 16, horizon: 8 }.materialize(ds))
        .collect()
}

fn train_cfg(steps: usize, use_cmr: bool) -> TrainConfig {
    TrainConfig {
        peak_lr: 5e-3,
        batch_size: 8,
        total_steps: steps,
        random_mask: false,
        use_cmr,
        seed: 7,
        ..TrainConfig::pretrain_defaults()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Forgetting {
    /// Held-out phase-1 loss after phase 1.
    pub after_phase1: f64,
    pub cmr_on: f64,
    pub cmr_off: f64,
}

/// Trains a tiny backbone on ramps, then continues on a chronological
/// stream of 200 ramp windows followed by 800 mirrored ones, with and
/// without replay. The stream is consumed at most once (100 batches of 8);
/// with replay the ramp prefix seeds the memory instead of being streamed.
pub fn forgetting(seed: u64) -> Forgetting {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new(seed);
    let bb = Backbone::init(tiny_backbone_config(), &mut store, &mut rng).unwrap();

    let a = panel(64, 48, seed + 1, ramp);
    let pool = WindowPool::new(&a, 0..48, 16, 8).unwrap();
    train_utp(&bb, &mut store, &train_cfg(300, false), UtpData::Pool(pool), &mut Hooks::default()).unwrap();
    let held = windows(&panel(64, 24, seed + 2, ramp), 0);
    let after_phase1 = mean_window_loss(&bb, &store, &held).unwrap();

    let a_stream = windows(&panel(200, 24, seed + 3, ramp), 0);
    let b_stream = flipped_windows(800, seed + 4);
    let stream: Vec<SeriesWindow> = a_stream.into_iter().chain(b_stream).collect();
    let phase2 = |use_cmr: bool| {
        let mut s = store.clone();
        let cfg = TrainConfig {
            memory_frac: 0.2,
            replace_ratio: 0.3,
            ..train_cfg(100, use_cmr)
        };
        train_utp(&bb, &mut s, &cfg, UtpData::Stream(&stream), &mut Hooks::default()).unwrap();
        mean_window_loss(&bb, &s, &held).unwrap()
    };
    let cmr_on = phase2(true);
    let cmr_off = phase2(false);
    Forgetting {
        after_phase1,
        cmr_on,
        cmr_off,
    }
}
