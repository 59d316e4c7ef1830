//! Bit-exact binary snapshots of named tensors.
//!
//! Layout: the magic `MGSNAP`, a little-endian `u32` version, a `u64` step
//! counter, a `u32` manifest length and a JSON manifest listing each
//! tensor's name, shape and dtype, followed by the raw little-endian `f64`
//! payloads in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"MGSNAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub t: u64,
    pub tensors: Vec<(String, Tensor)>,
    /// Free-form provenance entries stored in the manifest.
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

impl Snapshot {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f64".into() })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a snapshot (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let t = u64::from_le_bytes(r.array()?);
        let len = u32::from_le_bytes(r.array()?) as usize;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("snapshot manifest: {e}")))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.dtype != "f64" {
                return Err(Error::Format(format!("unsupported dtype {}", e.dtype)));
            }
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|c| c.checked_mul(8).map(|_| c))
                .ok_or_else(|| Error::Format(format!("tensor {} is too large", e.name)))?;
            let raw = r.take(count * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after snapshot payload".into()));
        }
        Ok(Snapshot { t, tensors, meta: manifest.meta })
    }

    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
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
            .ok_or_else(|| Error::Format("truncated snapshot".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        let mut meta = BTreeMap::new();
        meta.insert("source".into(), "test".into());
        Snapshot {
            t: 7,
            tensors: vec![
                ("a".into(), Tensor::vector(vec![1.5, -0.0, f64::MIN_POSITIVE])),
                ("b".into(), Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])),
                ("s".into(), Tensor::scalar(0.1)),
            ],
            meta,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.t, 7);
        assert_eq!(back.meta, s.meta);
        for ((n1, t1), (n2, t2)) in s.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert!(t1.bit_eq(t2));
        }
    }

    #[test]
    fn truncation_and_bad_magic_are_errors() {
        let bytes = sample().to_bytes();
        assert!(Snapshot::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Snapshot::from_bytes(&[]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Snapshot::from_bytes(&bad).is_err());
    }
}
