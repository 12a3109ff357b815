use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Ordered, named collection of trainable leaf tensors.
#[derive(Clone, Debug, Default)]
pub struct NetworkParams {
    entries: Vec<(String, Tensor)>,
}

impl NetworkParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new trainable leaf and return a handle to it.
    pub fn insert(&mut self, name: impl Into<String>, shape: Shape, data: Vec<f32>) -> Result<Tensor> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid("NetworkParams::insert", format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::param(shape, data)?;
        self.entries.push((name, t.clone()));
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.entries.iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Same values, no gradient tracking.
    pub fn detached(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.detach())).collect(),
        }
    }

    /// Set every scalar of every parameter to `value`.
    pub fn fill(&self, value: f32) {
        for (_, t) in &self.entries {
            t.set_data(vec![value; t.numel()]);
        }
    }

    /// Overwrite the values of parameter `name`; the shape must match.
    pub fn load(&self, name: &str, data: Vec<f32>) -> Result<()> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::invalid("NetworkParams::load", format!("unknown parameter `{name}`")))?;
        if data.len() != t.numel() {
            return Err(Error::DataLength { len: data.len(), shape: t.shape() });
        }
        t.set_data(data);
        Ok(())
    }
}
