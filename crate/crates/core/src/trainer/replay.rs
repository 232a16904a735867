//! Continual memory replay: a seeded reservoir buffer mixed into batches
//! drawn chronologically from the current stream.

use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Memory size `floor(s * n_total)` and the range of the current stream.
pub fn cmr_partition(n_total: usize, s: f64) -> (usize, Range<usize>) {
    let k = ((s * n_total as f64).floor() as usize).min(n_total);
    (k, k..n_total)
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    pub capacity: usize,
    pub items: Vec<T>,
    /// Items placed by seeding.
    pub fill_count: usize,
    /// Items observed so far, seeded ones included.
    pub seen_count: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            fill_count: 0,
            seen_count: 0,
        }
    }

    /// A buffer holding exactly `seed`, at capacity `seed.len()`.
    pub fn seeded(seed: &[T]) -> Self {
        Self {
            capacity: seed.len(),
            items: seed.to_vec(),
            fill_count: seed.len(),
            seen_count: seed.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Reservoir update: appends until full, then each new item replaces a
    /// uniform slot with probability `capacity / seen_count`.
    pub fn update(&mut self, new: &[T], rng: &mut ChaCha8Rng) {
        if self.capacity == 0 {
            return;
        }
        for x in new {
            self.seen_count += 1;
            if self.items.len() < self.capacity {
                self.items.push(x.clone());
            } else {
                let j = rng.random_range(0..self.seen_count);
                if j < self.capacity {
                    self.items[j] = x.clone();
                }
            }
        }
    }
}

/// Replaces `floor(r_mix * |batch|)` uniformly chosen current samples with
/// distinct buffer samples (fewer if the buffer is smaller). Returns the
/// mixed batch and the number of memory samples in it.
pub fn mix_batch<T: Clone>(current: &[T], buffer: &ReplayBuffer<T>, r_mix: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, usize) {
    let want = (r_mix * current.len() as f64).floor() as usize;
    let k = want.min(buffer.len());
    let mut batch = current.to_vec();
    if k == 0 {
        return (batch, 0);
    }
    let slots = sample(rng, current.len(), k);
    let picks = sample(rng, buffer.len(), k);
    for (s, p) in slots.iter().zip(picks.iter()) {
        batch[s] = buffer.items[p].clone();
    }
    (batch, k)
}

/// Batches over a chronological stream, with optional replay.
///
/// With replay on, the first `floor(memory_frac * n)` items seed the buffer
/// and the remainder forms the current stream; otherwise every item is
/// current.
#[derive(Debug, Clone)]
pub struct CmrStream<T> {
    current: Vec<T>,
    cursor: usize,
    buffer: Option<ReplayBuffer<T>>,
    replace_ratio: f64,
}

impl<T: Clone> CmrStream<T> {
    pub fn new(stream: Vec<T>, use_cmr: bool, memory_frac: f64, replace_ratio: f64) -> Result<Self> {
        let (current, buffer) = if use_cmr {
            let (k, rest) = cmr_partition(stream.len(), memory_frac);
            (stream[rest].to_vec(), Some(ReplayBuffer::seeded(&stream[..k])))
        } else {
            (stream, None)
        };
        if current.is_empty() {
            return Err(Error::Windowing("no samples left in the current stream".into()));
        }
        Ok(Self {
            current,
            cursor: 0,
            buffer,
            replace_ratio,
        })
    }

    pub fn current_len(&self) -> usize {
        self.current.len()
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer<T>> {
        self.buffer.as_ref()
    }

    /// The next `size` consecutive current items (wrapping), mixed with
    /// memory; the drawn current items then enter the reservoir.
    pub fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
        let drawn: Vec<T> = (0..size)
            .map(|k| self.current[(self.cursor + k) % self.current.len()].clone())
            .collect();
        self.cursor = (self.cursor + size) % self.current.len();
        match &mut self.buffer {
            Some(buf) => {
                let (batch, _) = mix_batch(&drawn, buf, self.replace_ratio, rng);
                buf.update(&drawn, rng);
                batch
            }
            None => drawn,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn partition_cases() {
        assert_eq!(cmr_partition(100, 0.2), (20, 20..100));
        assert_eq!(cmr_partition(100, 0.0), (0, 0..100));
        assert_eq!(cmr_partition(7, 0.5), (3, 3..7));
    }

    #[test]
    fn mix_counts_and_no_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let buf = ReplayBuffer::seeded(&(1000..1020).collect::<Vec<u32>>());
        let cur: Vec<u32> = (0..10).collect();
        for _ in 0..100 {
            let (b, k) = mix_batch(&cur, &buf, 0.3, &mut rng);
            assert_eq!((b.len(), k), (10, 3));
            assert_eq!(b.iter().filter(|&&x| x >= 1000).count(), 3);
            let mut kept: Vec<u32> = b.iter().copied().filter(|&x| x < 1000).collect();
            kept.dedup();
            assert_eq!(kept.len(), 7);
        }
        assert_eq!(mix_batch(&cur, &ReplayBuffer::new(5), 0.3, &mut rng).0, cur);
        assert_eq!(mix_batch(&cur, &buf, 0.0, &mut rng).0, cur);
        let small = ReplayBuffer::seeded(&[1000u32]);
        assert_eq!(mix_batch(&cur, &small, 0.5, &mut rng).1, 1);
    }

    #[test]
    fn reservoir_small_stream_and_zero_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(10);
        b.update(&[1, 2, 3], &mut rng);
        assert_eq!(b.items, vec![1, 2, 3]);
        let mut z = ReplayBuffer::new(0);
        z.update(&[1, 2, 3], &mut rng);
        assert!(z.is_empty());
    }

    /// Retention counts of 10^4 streamed items into capacity 100 over 200
    /// trials, pooled into 20 stream-position bins of 500 items. Expected
    /// 1000 retentions per bin.
    fn reservoir_bins(seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<usize> = (0..10_000).collect();
        let mut bins = vec![0usize; 20];
        for _ in 0..200 {
            let mut b = ReplayBuffer::new(100);
            b.update(&items, &mut rng);
            assert_eq!(b.len(), 100);
            for &x in &b.items {
                bins[x / 500] += 1;
            }
        }
        bins
    }

    #[test]
    fn reservoir_retention_is_uniform() {
        for (k, &c) in reservoir_bins(9).iter().enumerate() {
            assert!((800..=1200).contains(&c), "bin {k}: {c}");
        }
    }

    #[test]
    fn seeded_prefix_competes_with_the_stream() {
        // 20 seeded + 80 streamed: every item ends up kept with p = 0.2
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seeded_kept = 0;
        for _ in 0..500 {
            let mut b = ReplayBuffer::seeded(&(0..20).collect::<Vec<u32>>());
            b.update(&(20..100).collect::<Vec<u32>>(), &mut rng);
            seeded_kept += b.items.iter().filter(|&&x| x < 20).count();
        }
        let frac = seeded_kept as f64 / (500.0 * 20.0);
        assert!((frac - 0.2).abs() < 0.03, "{frac}");
    }

    #[test]
    fn stream_wraps_and_mixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = CmrStream::new((0..10).collect::<Vec<u32>>(), false, 0.2, 0.3).unwrap();
        assert_eq!(s.next_batch(4, &mut rng), vec![0, 1, 2, 3]);
        s.next_batch(4, &mut rng);
        assert_eq!(s.next_batch(4, &mut rng), vec![8, 9, 0, 1]);

        let mut s = CmrStream::new((0..10).collect::<Vec<u32>>(), true, 0.2, 0.5).unwrap();
        assert_eq!(s.current_len(), 8);
        let b = s.next_batch(4, &mut rng);
        assert_eq!(b.iter().filter(|&&x| x < 2).count(), 2);
        assert!(CmrStream::new(vec![1u32], true, 0.99, 0.3).is_ok());
        assert!(CmrStream::<u32>::new(vec![], false, 0.2, 0.3).is_err());
    }
}
