use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable leaves.
///
/// Layers keep [`ParamId`]s and read the current tensors through the store, so
/// an optimizer step only has to swap values here.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(invalid("param", format!("duplicate parameter name {name}")));
        }
        let t = Tensor::param(shape, data)?;
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(t);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    /// Replaces the values of a parameter with a fresh leaf of the same shape.
    pub fn set(&mut self, id: ParamId, data: Vec<S>) -> Result<()> {
        let shape = self.values[id.0].shape().to_vec();
        self.values[id.0] = Tensor::param(&shape, data)?;
        Ok(())
    }

    /// Gradients aligned with parameter order; unreachable parameters get zeros.
    pub fn grads(&self, grads: &Gradients<S>) -> Vec<Vec<S>> {
        self.values.iter().map(|t| grads.wrt(t)).collect()
    }

    /// 64-bit FNV-1a over names, shapes and little-endian values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        for (name, t) in self.names.iter().zip(&self.values) {
            h.write(name.as_bytes());
            for &d in t.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.numel() * 8);
            t.data().iter().for_each(|v| v.write_le(&mut buf));
            h.write(&buf);
        }
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv1a {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }

    pub fn hash(bytes: &[u8]) -> u64 {
        let mut h = Self::default();
        h.write(bytes);
        h.finish()
    }
}
