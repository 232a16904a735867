//! Adam, global-norm clipping and the warmup-stable-decay schedule.

use crate::config::TrainConfig;
use crate::params::ParameterStore;

/// Learning rate at `step` in `[0, total_steps]`.
///
/// Linear ramp from 0 over the warmup fraction, constant peak, then a
/// cosine decay to `0.1 * peak` over the final decay fraction.
pub fn wsd_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let s = step as f64;
    let peak = cfg.peak_lr;
    let warm = cfg.warmup_frac * total;
    let decay = cfg.decay_frac * total;
    let decay_start = total - decay;
    if s < warm {
        peak * s / warm
    } else if s < decay_start || decay == 0.0 {
        peak
    } else {
        let progress = ((s - decay_start) / decay).min(1.0);
        let floor = 0.1 * peak;
        floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with bias correction; state is kept per store entry.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParameterStore, cfg: &TrainConfig) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![0.0; e.values.len()]).collect();
        Self {
            beta1: cfg.adam_betas.0,
            beta2: cfg.adam_betas.1,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the store's gradient slots to every
    /// trainable entry.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64, trainable: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, e) in store.entries_mut().iter_mut().enumerate() {
            if !trainable[k] {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..e.values.len() {
                let g = e.grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                e.values[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales trainable gradients to global L2 norm at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParameterStore, trainable: &[bool], max_norm: f64) -> f64 {
    let sq: f64 = store
        .entries()
        .iter()
        .zip(trainable)
        .filter(|(_, &t)| t)
        .flat_map(|(e, _)| e.grad.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (e, _) in store.entries_mut().iter_mut().zip(trainable).filter(|(_, &t)| t) {
            e.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            peak_lr: 1e-3,
            ..TrainConfig::pretrain_defaults()
        }
    }

    #[test]
    fn schedule_landmarks() {
        let c = cfg(1000);
        assert_eq!(wsd_lr(0, &c), 0.0);
        assert_eq!(wsd_lr(50, &c), 5e-4);
        assert_eq!(wsd_lr(100, &c), 1e-3);
        assert_eq!(wsd_lr(500, &c), 1e-3);
        assert_eq!(wsd_lr(800, &c), 1e-3);
        assert!((wsd_lr(1000, &c) - 1e-4).abs() < 1e-9);
        // halfway through the decay: midpoint of peak and floor
        assert!((wsd_lr(900, &c) - 5.5e-4).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_continuous_and_bounded() {
        let c = cfg(997);
        let mut prev = wsd_lr(0, &c);
        for s in 1..=997 {
            let lr = wsd_lr(s, &c);
            assert!(lr >= 0.0 && lr <= c.peak_lr);
            assert!((lr - prev).abs() < c.peak_lr * 0.02, "jump at {s}");
            prev = lr;
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::new(0);
        let a = s.add("a", &[3], Init::Constant(1.0), &mut rng).unwrap();
        let b = s.add("b", &[1], Init::Constant(1.0), &mut rng).unwrap();
        s.entry_mut(a).grad = vec![0.5, -2.0, 0.0];
        s.entry_mut(b).grad = vec![1.0];
        let mut opt = Adam::new(&s, &cfg(10));
        opt.step(&mut s, 0.1, &[true, false]);
        let v = s.values(a);
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] - 1.1).abs() < 1e-6 && v[2] == 1.0);
        assert_eq!(s.values(b), &[1.0]);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::new(0);
        let a = s.add("a", &[2], Init::Zeros, &mut rng).unwrap();
        s.entry_mut(a).grad = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut s, &[true], 1.0), 5.0);
        assert!((s.entry(a).grad[0] - 0.6).abs() < 1e-12);
        assert_eq!(clip_grad_norm(&mut s, &[true], 1.0), 1.0);
    }
}
