use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameter collection. Iteration order is the lexicographic order
/// of names, so serialization and optimizer state are stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        self.entries
            .insert(name.into(), Param { tensor, trainable });
    }

    /// Inserts a tensor of `N(0, std^2)` entries.
    pub fn insert_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
        trainable: bool,
    ) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = Tensor::new(shape, data).expect("length matches shape");
        self.insert(name, t, trainable);
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| HeroError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| HeroError::UnknownParam(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    /// Marks every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.entries.values_mut() {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.tensor.clear_grad();
        }
    }

    /// Total number of scalar values across trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Copy of the store with gradient buffers dropped.
    pub fn snapshot(&self) -> ParamStore {
        let mut s = self.clone();
        s.zero_grads();
        s
    }

    /// Merges all entries of `other` into `self`, replacing same-named ones.
    pub fn extend(&mut self, other: ParamStore) {
        self.entries.extend(other.entries);
    }

    /// Flat name → values map, used by checkpoints.
    pub fn to_flat(&self) -> BTreeMap<String, FlatParam> {
        self.entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    FlatParam {
                        shape: p.tensor.shape().to_vec(),
                        values: p.tensor.data().to_vec(),
                        trainable: p.trainable,
                    },
                )
            })
            .collect()
    }

    pub fn from_flat(flat: &BTreeMap<String, FlatParam>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (k, f) in flat {
            let t = Tensor::new(f.shape.clone(), f.values.clone())?;
            store.insert(k.clone(), t, f.trainable);
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatParam {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}
