//! Named parameter tensors and their on-disk container.
//!
//! File layout, all integers unsigned 64-bit little-endian:
//!
//! ```text
//! "NMW1"
//! repeated until end of file:
//!     name_len, name (UTF-8, name_len bytes)
//!     rank, dims[rank]
//!     data: product(dims) f32 little-endian, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::config::NetConfig;
use crate::error::{Error, Result};
use crate::seed::keyed_rng;

pub const MAGIC: &[u8; 4] = b"NMW1";
const MAX_NAME_LEN: usize = 1 << 12;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Weights(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
    rng_seed: Option<u64>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialization of every tensor `cfg` needs. Layer-norm gains
    /// start at one and shifts at zero; everything else is drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with an RNG stream keyed by the
    /// seed and the tensor name, so adding tensors never perturbs others.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = Self {
            tensors: BTreeMap::new(),
            rng_seed: Some(seed),
        };
        // bias fan-in is the fan-in of the matching weight
        let shapes = cfg.parameter_shapes();
        let fan_in: BTreeMap<&str, usize> = shapes
            .iter()
            .filter_map(|(n, s)| n.strip_suffix(".weight").map(|p| (p, s[1])))
            .collect();
        for (name, shape) in &shapes {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".gamma") {
                vec![1.0; n]
            } else if name.ends_with(".beta") {
                vec![0.0; n]
            } else {
                let fan = if name.ends_with(".weight") {
                    shape[1]
                } else {
                    let prefix = name.strip_suffix(".bias").unwrap_or(name);
                    fan_in.get(prefix).copied().unwrap_or(shape[0])
                };
                let bound = 1.0 / (fan as f64).sqrt();
                let mut rng = keyed_rng(seed, name);
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            };
            store.tensors.insert(name.clone(), Tensor::new(shape.clone(), data)?);
        }
        Ok(store)
    }

    pub fn rng_seed(&self) -> Option<u64> {
        self.rng_seed
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Names and shapes, sorted by name.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors.iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect()
    }

    /// Checks that every tensor `cfg` references is present with the right
    /// shape and finite values.
    pub fn validate(&self, cfg: &NetConfig) -> Result<()> {
        cfg.validate()?;
        for (name, shape) in cfg.parameter_shapes() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Weights(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Weights("bad magic".into()));
        }
        let mut tensors = BTreeMap::new();
        while r.remaining() > 0 {
            let name_len = r.usize()?;
            if name_len > MAX_NAME_LEN {
                return Err(Error::Weights(format!("name length {name_len} too large")));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.usize()?;
            if rank > MAX_RANK {
                return Err(Error::Weights(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut count: usize = 1;
            for _ in 0..rank {
                let d = r.usize()?;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Weights(format!("tensor {name} is too large")))?;
                shape.push(d);
            }
            let nbytes = count
                .checked_mul(4)
                .filter(|n| *n <= r.remaining())
                .ok_or_else(|| Error::Weights(format!("tensor {name} is truncated")))?;
            let data: Vec<f32> = r
                .take(nbytes)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("tensor {name} has non-finite values")));
            }
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(Error::Weights(format!("duplicate tensor {name}")));
            }
        }
        Ok(Self {
            tensors,
            rng_seed: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Weights(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn usize(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Weights(format!("value {v} out of range")))
    }
}
