//! Named parameter arrays with matching gradient slots.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Index of an entry inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// How a freshly registered entry is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Normal with the given std, resampled outside two standard deviations.
    TruncNormal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    pub rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            rng_seed,
        }
    }

    /// Registers a new entry; names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::TruncNormal(std) => (0..n).map(|_| trunc_normal(rng) * std).collect(),
        };
        self.insert(name, shape.to_vec(), values)
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "parameter `{name}`: {} values for shape {shape:?}",
                values.len()
            )));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            grad: vec![0.0; n],
            values,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Fresh zeroed gradient buffers shaped like this store.
    pub fn grad_buffer(&self) -> Gradients {
        Gradients(self.entries.iter().map(|e| vec![0.0; e.values.len()]).collect())
    }

    /// Adds `scale * g` into the stored gradient slots.
    pub fn accumulate(&mut self, g: &Gradients, scale: f64) {
        for (e, gi) in self.entries.iter_mut().zip(&g.0) {
            for (a, b) in e.grad.iter_mut().zip(gi) {
                *a += scale * b;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.values.iter().all(|v| v.is_finite()))
    }

    /// Copies values from `other` for every name present in both stores.
    ///
    /// Returns the number of entries transferred.
    pub fn copy_matching_from(&mut self, other: &ParameterStore) -> Result<usize> {
        let mut n = 0;
        for e in &mut self.entries {
            if let Some(&j) = other.index.get(&e.name) {
                let src = &other.entries[j];
                if src.shape != e.shape {
                    return Err(Error::Transfer(format!(
                        "`{}` has shape {:?} in source but {:?} here",
                        e.name, src.shape, e.shape
                    )));
                }
                e.values.copy_from_slice(&src.values);
                n += 1;
            }
        }
        Ok(n)
    }
}

/// Gradient scratch space parallel to a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
        // keep the stream advancing deterministically
        let _: u32 = rng.random();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::new(0);
        s.add("w", &[2, 3], Init::Zeros, &mut rng).unwrap();
        assert!(s.add("w", &[1], Init::Zeros, &mut rng).is_err());
        assert_eq!(s.entry(ParamId(0)).grad.len(), 6);
    }

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new(1);
        let id = s.add("w", &[1000], Init::TruncNormal(0.02), &mut rng).unwrap();
        assert!(s.values(id).iter().all(|v| v.abs() <= 0.04));
    }
}
