//! Checkpoint storage with optional spilling to disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::snapshot::sha256_hex;
use crate::tensor::Tensor;
use crate::training::OptimizerState;

/// A state that can be checkpointed and compared across re-executions.
pub trait Checkpointable: Clone {
    fn encode(&self) -> Vec<u8>;
    fn decode(bytes: &[u8]) -> Result<Self>;

    fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.encode()).into()
    }
}

impl Checkpointable for OptimizerState {
    fn encode(&self) -> Vec<u8> {
        self.to_bytes()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        OptimizerState::from_bytes(bytes)
    }
}

impl Checkpointable for f64 {
    fn encode(&self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let b: [u8; 8] = bytes.try_into().map_err(|_| Error::Format("expected 8 bytes".into()))?;
        Ok(f64::from_le_bytes(b))
    }
}

impl Checkpointable for Tensor {
    fn encode(&self) -> Vec<u8> {
        crate::snapshot::Snapshot { tensors: vec![("x".into(), self.clone())], ..Default::default() }.to_bytes()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let s = crate::snapshot::Snapshot::from_bytes(bytes)?;
        s.get("x").cloned().ok_or_else(|| Error::Format("missing tensor".into()))
    }
}

/// Where and when states leave memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpillConfig {
    /// States held in memory before the oldest are written out.
    pub max_in_memory: usize,
    pub dir: PathBuf,
    pub run_id: String,
}

/// Indexed states, in memory or spilled. Spill files are named
/// `{run_id}_{index:08}.snap`; `{run_id}_manifest.json` maps indices to
/// sha256 checksums.
#[derive(Debug)]
pub struct StateStore<S> {
    mem: BTreeMap<usize, S>,
    disk: BTreeMap<usize, String>,
    spill: Option<SpillConfig>,
}

impl<S: Checkpointable> StateStore<S> {
    pub fn new(spill: Option<SpillConfig>) -> Result<Self> {
        if let Some(cfg) = &spill {
            if cfg.max_in_memory == 0 {
                return Err(Error::config("memory budget must hold at least one state"));
            }
            fs::create_dir_all(&cfg.dir)?;
        }
        Ok(StateStore { mem: BTreeMap::new(), disk: BTreeMap::new(), spill })
    }

    pub fn len(&self) -> usize {
        self.mem.len() + self.disk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_memory(&self) -> usize {
        self.mem.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.mem.contains_key(&index) || self.disk.contains_key(&index)
    }

    /// Stored indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.mem.keys().chain(self.disk.keys()).copied().collect();
        v.sort_unstable();
        v
    }

    fn path(&self, index: usize) -> Option<PathBuf> {
        self.spill.as_ref().map(|c| c.dir.join(format!("{}_{index:08}.snap", c.run_id)))
    }

    fn write_manifest(&self) -> Result<()> {
        if let Some(c) = &self.spill {
            let json = serde_json::to_string_pretty(&self.disk).expect("map serializes");
            fs::write(c.dir.join(format!("{}_manifest.json", c.run_id)), json)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, index: usize, state: S) -> Result<()> {
        self.mem.insert(index, state);
        let Some(budget) = self.spill.as_ref().map(|c| c.max_in_memory) else {
            return Ok(());
        };
        while self.mem.len() > budget {
            let (&oldest, _) = self.mem.iter().next().expect("non-empty");
            let s = self.mem.remove(&oldest).expect("present");
            let bytes = s.encode();
            fs::write(self.path(oldest).expect("spill configured"), &bytes)?;
            self.disk.insert(oldest, sha256_hex(&bytes));
            self.write_manifest()?;
        }
        Ok(())
    }

    fn load(&self, index: usize, sha: &str) -> Result<S> {
        let bytes = fs::read(self.path(index).expect("spill configured"))?;
        if sha256_hex(&bytes) != sha {
            return Err(Error::Corrupt { index });
        }
        S::decode(&bytes)
    }

    pub fn get(&self, index: usize) -> Result<Option<S>> {
        if let Some(s) = self.mem.get(&index) {
            return Ok(Some(s.clone()));
        }
        match self.disk.get(&index) {
            Some(sha) => self.load(index, sha).map(Some),
            None => Ok(None),
        }
    }

    pub fn remove(&mut self, index: usize) -> Result<Option<S>> {
        if let Some(s) = self.mem.remove(&index) {
            return Ok(Some(s));
        }
        let Some(sha) = self.disk.remove(&index) else {
            return Ok(None);
        };
        let s = self.load(index, &sha)?;
        fs::remove_file(self.path(index).expect("spill configured"))?;
        self.write_manifest()?;
        Ok(Some(s))
    }
}
