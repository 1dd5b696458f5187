//! Binary container for named parameter tensors and optimizer moments.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SCNTXCKP"
//! version      u32      1
//! count        u32      number of tensors
//! tensor*      name_len u32, name (UTF-8), ndim u32, dims u64 x ndim,
//!              width u8 (4 = f32, 8 = f64), raw data (width x numel)
//! has_optim    u8       0 or 1
//! [optim]      step u64, count u32,
//!              entry*: name_len u32, name, m block, v block
//!              (a block is ndim u32, dims u64 x ndim, width u8, raw data)
//! ```

use std::path::Path;

use super::{DiffError, ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"SCNTXCKP";
const VERSION: u32 = 1;

/// Tensor payload independent of the in-memory scalar type. Values are kept
/// as `f64`, which represents every `f32` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub width: u8,
    pub values: Vec<f64>,
}

impl RawTensor {
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        Self { shape: t.shape().to_vec(), width: S::WIDTH, values: t.to_f64_vec() }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>, DiffError> {
        Tensor::from_f64(&self.shape, &self.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentPair {
    pub name: String,
    pub m: RawTensor,
    pub v: RawTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSection {
    pub step: u64,
    pub moments: Vec<MomentPair>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, RawTensor)>,
    pub optimizer: Option<OptimizerSection>,
}

impl Checkpoint {
    pub fn push_store<S: Scalar>(&mut self, store: &ParamStore<S>) {
        for (name, t) in store.iter() {
            self.tensors.push((name.to_string(), RawTensor::from_tensor(t)));
        }
    }

    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrite every parameter of `store` from this checkpoint; names and
    /// shapes must match exactly.
    pub fn load_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<(), DiffError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let raw = self
                .get(&name)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing tensor {name}")))?;
            let cur = store.get(id);
            if raw.shape != cur.shape() {
                return Err(DiffError::Checkpoint(format!(
                    "tensor {name}: checkpoint shape {:?} does not match expected {:?}",
                    raw.shape,
                    cur.shape()
                )));
            }
            *store.get_mut(id) = raw.to_tensor()?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            write_name(&mut out, name);
            write_block(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                out.extend_from_slice(&(opt.moments.len() as u32).to_le_bytes());
                for pair in &opt.moments {
                    write_name(&mut out, &pair.name);
                    write_block(&mut out, &pair.m);
                    write_block(&mut out, &pair.v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiffError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DiffError::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.name()?;
            tensors.push((name, r.block()?));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let n = r.u32()? as usize;
                let mut moments = Vec::with_capacity(n);
                for _ in 0..n {
                    let name = r.name()?;
                    let m = r.block()?;
                    let v = r.block()?;
                    moments.push(MomentPair { name, m, v });
                }
                Some(OptimizerSection { step, moments })
            }
            other => return Err(DiffError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(DiffError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { tensors, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiffError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn write_block(out: &mut Vec<u8>, t: &RawTensor) {
    out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(t.width);
    match t.width {
        4 => t.values.iter().for_each(|&v| (v as f32).write_le(out)),
        _ => t.values.iter().for_each(|&v| v.write_le(out)),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        if self.pos + n > self.bytes.len() {
            return Err(DiffError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, DiffError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| DiffError::Checkpoint("tensor name is not UTF-8".into()))
    }

    fn block(&mut self) -> Result<RawTensor, DiffError> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let width = self.take(1)?[0];
        let numel: usize = shape.iter().product();
        let values = match width {
            4 => self.take(4 * numel)?.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            8 => self.take(8 * numel)?.chunks_exact(8).map(f64::read_le).collect(),
            w => return Err(DiffError::Checkpoint(format!("unsupported scalar width {w}"))),
        };
        Ok(RawTensor { shape, width, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(vals in proptest::collection::vec(-1e6f32..1e6, 1..40), step in 0u64..1000) {
            let n = vals.len();
            let t = Tensor::<f32>::from_vec(&[n], vals.clone()).unwrap();
            let raw = RawTensor::from_tensor(&t);
            let ck = Checkpoint {
                tensors: vec![("grid.level0.table".into(), raw.clone())],
                optimizer: Some(OptimizerSection {
                    step,
                    moments: vec![MomentPair { name: "grid.level0.table".into(), m: raw.clone(), v: raw }],
                }),
            };
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(&back, &ck);
            let t2: Tensor<f32> = back.tensors[0].1.to_tensor().unwrap();
            prop_assert_eq!(t2.data(), &vals[..]);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0").is_err());
        let ck = Checkpoint {
            tensors: vec![("a".into(), RawTensor { shape: vec![2], width: 8, values: vec![1.0, 2.0] })],
            optimizer: None,
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn shape_mismatch_on_load_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        store.add("grid.level0.table", Tensor::zeros(&[4, 2]));
        let ck = Checkpoint {
            tensors: vec![(
                "grid.level0.table".into(),
                RawTensor { shape: vec![2, 2], width: 4, values: vec![0.0; 4] },
            )],
            optimizer: None,
        };
        assert!(ck.load_into(&mut store).is_err());
    }
}
