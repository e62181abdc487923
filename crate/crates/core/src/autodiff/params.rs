use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Named parameter tensors, keyed by paths such as `b3/weight` or
/// `head/bias`. Iteration order is the lexicographic key order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S> {
    entries: BTreeMap<String, Tensor<S>>,
}

/// Tape handles for the entries of a [`ParamSet`].
pub type ParamVars = BTreeMap<String, Var>;

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Tensor<S>) -> Option<Tensor<S>> {
        self.entries.insert(key.into(), value)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<S>> {
        self.entries.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&Tensor<S>> {
        self.get(key)
            .ok_or_else(|| Error::KeyMismatch(format!("missing parameter {key}")))
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<Tensor<S>> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Entries whose key starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Inserts (overwriting) every entry of `other`.
    pub fn extend(&mut self, other: ParamSet<S>) {
        self.entries.extend(other.entries);
    }

    /// Records every entry as a leaf on `tape`.
    pub fn to_vars(&self, tape: &mut Tape<S>) -> ParamVars {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect()
    }

    /// Collects the gradients of `vars` into a parameter-shaped set.
    pub fn from_grads(vars: &ParamVars, grads: &Gradients<S>) -> Result<Self> {
        let mut out = Self::new();
        for (k, &v) in vars {
            out.insert(k.clone(), grads.wrt(v)?.clone());
        }
        Ok(out)
    }

    /// Zeros with the same keys and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros_like(v)))
                .collect(),
        }
    }

    /// Elementwise `self += other`; keys must match exactly.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        check_keys(self, other)?;
        for (k, v) in &mut self.entries {
            v.add_assign(&other.entries[k])?;
        }
        Ok(())
    }

    /// Overwrites the entries named in `update`, which must all exist.
    pub fn assign(&mut self, update: &Self) -> Result<()> {
        for (k, v) in &update.entries {
            let slot = self
                .entries
                .get_mut(k)
                .ok_or_else(|| Error::KeyMismatch(format!("unknown parameter {k}")))?;
            if slot.shape() != v.shape() {
                return Err(Error::shape("assign", slot.shape(), v.shape()));
            }
            *slot = v.clone();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|x| x.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

fn check_keys<S: Real>(a: &ParamSet<S>, b: &ParamSet<S>) -> Result<()> {
    if a.entries.len() != b.entries.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let left: Vec<_> = a.keys().collect();
        let right: Vec<_> = b.keys().collect();
        return Err(Error::KeyMismatch(format!("{left:?} vs {right:?}")));
    }
    Ok(())
}

/// One gradient-descent step: every parameter `p` becomes `p - lr * g`.
///
/// `grads` must carry exactly the keys of `params`.
pub fn sgd_step<S: Real>(params: &ParamSet<S>, grads: &ParamSet<S>, lr: f64) -> Result<ParamSet<S>> {
    check_keys(params, grads)?;
    let lr = S::from_f64(lr);
    let mut out = ParamSet::new();
    for (k, p) in &params.entries {
        out.insert(k.clone(), p.axpy(lr, &grads.entries[k])?);
    }
    Ok(out)
}
