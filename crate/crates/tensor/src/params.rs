use std::collections::HashMap;
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::norm::RunningStats;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(usize);

/// A trainable tensor addressed by a dot-separated module path.
#[derive(Clone, Debug)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named parameters and normalization statistics of one model instance.
///
/// Parameter values are replaced wholesale between optimizer steps; a new
/// leaf is created each time so earlier computation records stay valid.
#[derive(Debug)]
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
    stats: Vec<(String, Arc<RunningStats<T>>)>,
    stats_by_name: HashMap<String, StatsId>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            stats: Vec::new(),
            stats_by_name: HashMap::new(),
        }
    }

    /// Stores `value` as a gradient-tracking leaf under `name`.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value: value.with_grad(),
        });
        Ok(id)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> Result<StatsId> {
        let name = name.into();
        if self.stats_by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = StatsId(self.stats.len());
        self.stats_by_name.insert(name.clone(), id);
        self.stats
            .push((name, Arc::new(RunningStats::new(channels))));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0].1
    }

    pub fn stats_by_name(&self, name: &str) -> Option<&RunningStats<T>> {
        self.stats_by_name.get(name).map(|id| self.stats(*id))
    }

    pub fn stats_iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats.iter().map(|(n, s)| (n.as_str(), s.as_ref()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces the value of a parameter, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let shape = self.params[id.0].value.shape().clone();
        let value = Tensor::from_shape(shape, data)?;
        self.params[id.0].value = value.with_grad();
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<Vec<T>> {
        self.params[id.0].value.grad()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.value.zero_grad();
        }
    }

    /// Store whose parameters are `tensors`, named `input0`, `input1`, ...
    pub fn from_tensors(tensors: &[Tensor<T>]) -> Self {
        let mut store = Self::new();
        for (i, t) in tensors.iter().enumerate() {
            store
                .add(format!("input{i}"), t.detach())
                .expect("generated names are unique");
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.weight", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(matches!(
            store.add("a.weight", Tensor::zeros(&[2]).unwrap()),
            Err(TensorError::DuplicateParam(_))
        ));
        assert!(store.id("a.weight").is_ok());
        assert!(store.id("b").is_err());
    }

    #[test]
    fn set_value_keeps_shape_and_tracks_grad() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        store.set_value(id, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(store.get(id).requires_grad());
        assert_eq!(store.get(id).dims(), &[2, 2]);
        assert!(store.set_value(id, vec![1.0]).is_err());
    }
}
