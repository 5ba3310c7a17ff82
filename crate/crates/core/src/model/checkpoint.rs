use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Model;
use crate::autodiff::{RunningStats, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSRGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 of a canonical configuration text.
pub fn config_hash(canonical: &str) -> [u8; 32] {
    Sha256::digest(canonical.as_bytes()).into()
}

/// Versioned container: magic, format version, config hash and step count,
/// followed by named tensors (name, dims, little-endian doubles).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let elems = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(format!("tensor `{name}` is too large")))?;
            let raw = r.take(elems.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| corrupt(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config_hash,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

impl Model {
    /// Parameters as `param/<name>` and running statistics as
    /// `bn/<layer>/mean`, `bn/<layer>/var`, in model order.
    pub fn export_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|p| (format!("param/{}", p.name), p.value.clone()))
            .collect();
        for (name, s) in &self.bn {
            out.push((format!("bn/{name}/mean"), Tensor::from_vec(s.mean.clone())));
            out.push((format!("bn/{name}/var"), Tensor::from_vec(s.var.clone())));
        }
        out
    }

    /// Overwrites every parameter and running statistic from `ckpt`; all
    /// must be present with matching shapes.
    pub fn import_tensors(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = ckpt
                .get(name)
                .ok_or_else(|| corrupt(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(corrupt(format!(
                    "tensor `{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            params.push(fetch(&format!("param/{}", p.name), p.value.shape())?);
        }
        let mut stats = Vec::with_capacity(self.bn.len());
        for (name, s) in &self.bn {
            let c = s.mean.len();
            stats.push(RunningStats {
                mean: fetch(&format!("bn/{name}/mean"), &[c])?.into_data(),
                var: fetch(&format!("bn/{name}/var"), &[c])?.into_data(),
            });
        }
        for (p, v) in self.params.iter_mut().zip(params) {
            p.value = v;
        }
        for ((_, s), v) in self.bn.iter_mut().zip(stats) {
            *s = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let ck = Checkpoint {
            config_hash: config_hash("a = 1"),
            step: 42,
            tensors: vec![
                ("x".into(), Tensor::new(vec![2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.0]).unwrap()),
                ("y".into(), Tensor::scalar(7.0)),
            ],
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let ck = Checkpoint {
            config_hash: [0; 32],
            step: 1,
            tensors: vec![("x".into(), Tensor::scalar(1.0))],
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
