//! Named parameter storage and the `PVAW` weight-file format.
//!
//! Layout: `"PVAW"`, u32 version (1), u32 entry count, then per entry a u16
//! name length, the UTF-8 name, a u8 rank, rank x u32 dims and little-endian
//! f32 data. All integers are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

const MAGIC: &[u8; 4] = b"PVAW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Updated by the optimiser.
    Trainable,
    /// Running statistics, updated by forward passes in minibatch mode.
    Statistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Param { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Self {
        let n = dims.iter().product();
        Param { dims, data: vec![value; n] }
    }

    /// View as an NCHW tensor (rank <= 4, left-padded with ones).
    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        if self.dims.len() > 4 {
            return Err(Error::Rank {
                rank: self.dims.len(),
                max: 4,
            });
        }
        let mut d = [1usize; 4];
        d[4 - self.dims.len()..].copy_from_slice(&self.dims);
        Tensor::new(Shape::new(d[0], d[1], d[2], d[3]), self.data.clone())
    }
}

/// Parameters keyed by `layer.suffix` (`conv2_1/3x3.weight`, `fc6.bias`, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore<T = f32> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        WeightStore { params: BTreeMap::new() }
    }

    /// He-normal conv/FC weights, zero biases and shifts, unit scales, and
    /// identity batch-norm statistics (mean 0, variance 1).
    pub fn init(net: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for layer in &net.layers {
            let fan_in = match &layer.kind {
                LayerKind::Conv(c) => c.in_channels / c.groups * c.kernel_h * c.kernel_w,
                LayerKind::FullyConnected { in_features, .. } => *in_features,
                _ => 0,
            };
            for p in layer.kind.params(&layer.name) {
                let value = if p.name.ends_with(".weight") {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    let n = p.dims.iter().product();
                    let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
                    Param { dims: p.dims, data }
                } else if p.name.ends_with(".scale") || p.name.ends_with(".var") {
                    Param::filled(p.dims, T::one())
                } else {
                    Param::filled(p.dims, T::zero())
                };
                store.params.insert(p.name, value);
            }
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<T>) -> Option<Param<T>> {
        self.params.insert(name.into(), param)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<T>> {
        self.params.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    let data = p.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))).collect();
                    (k.clone(), Param { dims: p.dims.clone(), data })
                })
                .collect(),
        }
    }

    /// Every parameter the network reads must be present with the right dims.
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        for layer in &net.layers {
            for p in layer.kind.params(&layer.name) {
                let suffix = p.name.rsplit('.').next().unwrap_or_default().to_string();
                match self.params.get(&p.name) {
                    None => {
                        return Err(Error::MissingWeight {
                            layer: layer.name.clone(),
                            param: suffix,
                        })
                    }
                    Some(found) if found.dims != p.dims => {
                        return Err(Error::WeightShape {
                            layer: layer.name.clone(),
                            param: suffix,
                            expected: p.dims,
                            found: found.dims.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub(crate) fn slice(&self, layer: &str, suffix: &str) -> Result<&[T]> {
        self.params
            .get(&format!("{layer}.{suffix}"))
            .map(|p| p.data.as_slice())
            .ok_or_else(|| Error::MissingWeight {
                layer: layer.into(),
                param: suffix.into(),
            })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, p) in &self.params {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            let rank = u8::try_from(p.dims.len()).map_err(|_| Error::Format(format!("rank too large: {name}")))?;
            out.write_all(&[rank])?;
            for &d in &p.dims {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(p.data.len() * 4);
            for v in &p.data {
                buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a PVAW weight file".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported weight file version {version}")));
        }
        let count = read_u32(&mut input)?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            input.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("weight name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            input.read_exact(&mut rank)?;
            let dims = (0..rank[0])
                .map(|_| read_u32(&mut input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 4];
            input.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            store.params.insert(name, Param { dims, data });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
