use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    tensor: Tensor,
}

/// Ordered collection of named trainable tensors.
///
/// Value-semantic: cloning yields an independent snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.id_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.push(Entry { name, tensor });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.tensor))
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// `self += scale * grads`, for every parameter present in `grads`.
    pub fn add_scaled(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            let entry = self
                .entries
                .get_mut(id.0)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter {}", id.0)))?;
            if entry.tensor.shape() != g.shape() {
                return Err(Error::Config(format!(
                    "gradient shape {:?} does not match parameter {} {:?}",
                    g.shape(),
                    entry.name,
                    entry.tensor.shape()
                )));
            }
            for (p, d) in entry.tensor.data_mut().iter_mut().zip(g.data()) {
                *p += scale * d;
            }
        }
        Ok(())
    }

    /// Elementwise `self - other`, as a gradient-shaped map.
    pub fn difference(&self, other: &ParamSet) -> Result<Gradients> {
        self.check_layout(other)?;
        let mut out = Gradients::new();
        for (i, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            let data = a
                .tensor
                .data()
                .iter()
                .zip(b.tensor.data())
                .map(|(x, y)| x - y)
                .collect();
            out.insert(ParamId(i), Tensor::new(a.tensor.shape().to_vec(), data)?);
        }
        Ok(out)
    }

    /// Largest absolute elementwise difference; both sets must share a layout.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| {
                a.tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max))
    }

    fn check_layout(&self, other: &ParamSet) -> Result<()> {
        let same = self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if same {
            Ok(())
        } else {
            Err(Error::Config("parameter sets have different layouts".into()))
        }
    }
}

/// Gradient tensors keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.map.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.map.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    /// Accumulates `other` into `self`; keys missing on either side are unioned.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            match self.map.get_mut(&id) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::scalar(1.0)).unwrap();
        assert!(p.push("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn add_scaled_touches_only_present_keys() {
        let mut p = ParamSet::new();
        let a = p.push("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = p.push("b", Tensor::scalar(5.0)).unwrap();
        let mut g = Gradients::new();
        g.insert(a, Tensor::vector(vec![1.0, -1.0]));
        p.add_scaled(&g, -0.5).unwrap();
        assert_eq!(p.get(a).data(), &[0.5, 2.5]);
        assert_eq!(p.get(b).data(), &[5.0]);
    }

    #[test]
    fn accumulate_unions_keys() {
        let mut g = Gradients::new();
        g.insert(ParamId(0), Tensor::scalar(1.0));
        let mut h = Gradients::new();
        h.insert(ParamId(0), Tensor::scalar(2.0));
        h.insert(ParamId(1), Tensor::scalar(3.0));
        g.accumulate(&h);
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[3.0]);
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[3.0]);
    }
}
