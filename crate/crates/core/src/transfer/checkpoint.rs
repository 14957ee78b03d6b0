//! Binary named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SLUCKPT\0"
//! version    u32
//! meta_len   u32, then meta_len bytes of UTF-8 "key=value\n" lines (keys sorted)
//! count      u32
//! count × record:
//!     name_len u32, name (UTF-8)
//!     dtype    u8   (0 = f32, 1 = f64)
//!     flags    u8   (bit 0: trainable)
//!     rank     u32, rank × u64 dims
//!     payload  product(dims) × dtype size bytes, row-major
//!     crc32    u32 over every preceding byte of the record
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;

use crate::autodiff::{DType, Float, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const MAGIC: &[u8; 8] = b"SLUCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub trainable: bool,
    pub payload: Vec<u8>,
}

impl StoredTensor {
    pub fn from_tensor<T: Float>(t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        Self {
            shape: t.shape().to_vec(),
            dtype: T::DTYPE,
            trainable: t.requires_grad(),
            payload,
        }
    }

    /// Decode into `T`; refuses to cast between dtypes.
    pub fn to_tensor<T: Float>(&self, name: &str) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Dtype {
                name: name.to_string(),
                expected: T::DTYPE.name(),
                found: self.dtype.name(),
            });
        }
        let data = self.payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Ok(Tensor::new(self.shape.clone(), data)?.with_requires_grad(self.trainable))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: IndexMap<String, StoredTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Load(format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params<T: Float>(params: &ParamStore<T>, metadata: BTreeMap<String, String>) -> Self {
        let tensors = params
            .iter()
            .map(|(n, t)| (n.to_string(), StoredTensor::from_tensor(t)))
            .collect();
        Self { metadata, tensors }
    }

    pub fn insert<T: Float>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.insert(name.into(), StoredTensor::from_tensor(t));
    }

    pub fn tensor<T: Float>(&self, name: &str) -> Result<Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Load(format!("missing tensor `{name}`")))?
            .to_tensor(name)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Load(format!("missing metadata key `{key}`")))
    }

    /// Overwrite every tensor of `params` from this checkpoint, including its
    /// trainable flag. Names must match exactly in both directions.
    pub fn load_into<T: Float>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(name) = self.tensors.keys().find(|n| params.id(n).is_none()) {
            return Err(Error::Load(format!("unknown tensor `{name}`")));
        }
        if let Some((name, _)) = params.iter().find(|(n, _)| !self.tensors.contains_key(*n)) {
            return Err(Error::Load(format!("checkpoint lacks tensor `{name}`")));
        }
        for (name, stored) in &self.tensors {
            let t = stored.to_tensor::<T>(name)?;
            params.assign(name, t.data(), t.shape()).map_err(|e| match e {
                Error::Dimension { lhs, rhs, .. } => {
                    Error::Load(format!("tensor `{name}` has shape {rhs:?}, model expects {lhs:?}"))
                }
                other => other,
            })?;
            params
                .by_name_mut(name)
                .expect("checked")
                .set_requires_grad(stored.trainable);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Validation(format!("metadata entry `{k}` cannot be encoded")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let expected = t.shape.iter().product::<usize>() * t.dtype.size();
            if t.payload.len() != expected {
                return Err(Error::Validation(format!(
                    "tensor `{name}` payload does not match its shape"
                )));
            }
            let start = out.len();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype.tag());
            out.push(u8::from(t.trainable));
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.payload);
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Load("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Load(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| Error::Load("metadata is not UTF-8".into()))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Load(format!("bad metadata line `{line}`")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("tensor count")?;
        let mut tensors = IndexMap::with_capacity(count as usize);
        for i in 0..count {
            let start = r.pos;
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Load(format!("tensor #{i} name is not UTF-8")))?
                .to_string();
            let ctx = |what: &str| format!("{what} of tensor `{name}`");
            let dtype = DType::from_tag(r.u8(&ctx("dtype"))?)
                .ok_or_else(|| Error::Load(format!("unknown dtype tag for tensor `{name}`")))?;
            let flags = r.u8(&ctx("flags"))?;
            let rank = r.u32(&ctx("rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&ctx("dims"))? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Load(format!("shape {shape:?} of tensor `{name}` overflows")))?;
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Load(format!("tensor `{name}` has invalid shape {shape:?}")));
            }
            let payload = r.take(numel, &ctx("payload"))?.to_vec();
            let end = r.pos;
            let crc = r.u32(&ctx("checksum"))?;
            if crc32fast::hash(&buf[start..end]) != crc {
                return Err(Error::Load(format!("checksum mismatch in tensor `{name}`")));
            }
            if tensors.contains_key(&name) {
                return Err(Error::Load(format!("duplicate tensor `{name}`")));
            }
            tensors.insert(
                name,
                StoredTensor {
                    shape,
                    dtype,
                    trainable: flags & 1 == 1,
                    payload,
                },
            );
        }
        if r.pos != buf.len() {
            return Err(Error::Load(format!(
                "{} trailing bytes after last tensor",
                buf.len() - r.pos
            )));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Container holding one feature matrix under the name `features`.
    pub fn from_features(f: &FeatureMatrix) -> Self {
        let mut c = Self::new();
        c.metadata.insert("kind".into(), "features".into());
        let t = Tensor::new(vec![f.frames(), f.dim()], f.data().to_vec()).expect("feature shape");
        c.insert("features", &t);
        c
    }

    pub fn to_features(&self) -> Result<FeatureMatrix> {
        let t = self.tensor::<f32>("features")?;
        if t.shape().len() != 2 {
            return Err(Error::Load(format!("features tensor has rank {}", t.shape().len())));
        }
        let (frames, dim) = (t.shape()[0], t.shape()[1]);
        FeatureMatrix::new(frames, dim, t.into_data())
    }
}
