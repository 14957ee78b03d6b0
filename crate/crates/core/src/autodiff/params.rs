use indexmap::IndexMap;

use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of learnable tensors.
///
/// Names are hierarchical dotted paths (`encoder.layer0.self_attn.wq`).
/// Insertion order is the serialization order and the RNG consumption order
/// during initialization. A tensor with `requires_grad == false` is frozen.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "duplicate parameter `{name}`");
        let (idx, _) = self.params.insert_full(name, tensor.with_requires_grad(true));
        ParamId(idx)
    }

    /// Scaled-uniform (Glorot) initialized `fan_in × fan_out` matrix.
    pub fn glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.uniform(-bound, bound)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("shape"))
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![T::of(value); n]).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Replace the values of an existing tensor, keeping its trainable flag.
    pub fn assign(&mut self, name: &str, data: &[T], shape: &[usize]) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Load(format!("unknown tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Dimension {
                op: "assign",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.set_requires_grad(false);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// FNV-1a over names, shapes and raw bits of every tensor accepted by `filter`.
    pub fn fingerprint(&self, mut filter: impl FnMut(&str, &Tensor<T>) -> bool) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in self.iter().filter(|(n, t)| filter(n, t)) {
            bytes.extend_from_slice(name.as_bytes());
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        }
        fnv1a(&bytes)
    }

    /// Fingerprint of every frozen tensor.
    pub fn frozen_fingerprint(&self) -> u64 {
        self.fingerprint(|_, t| !t.requires_grad())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
