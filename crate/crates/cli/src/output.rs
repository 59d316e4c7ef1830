//! Run directories: `<out_dir>/<command>/<hash12>/`, holding CSVs that start
//! with a provenance comment, snapshots tagged with the same provenance, the
//! resolved configuration and a checksum manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use metagrad::snapshot::{sha256_hex, Snapshot};
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct RunDir {
    dir: PathBuf,
    command: String,
    hash: String,
    seed: u64,
    files: BTreeMap<String, String>,
    volatile: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
    /// File name to sha256.
    files: &'a BTreeMap<String, String>,
    /// Files whose contents depend on the machine, such as wall times.
    volatile: &'a [String],
}

impl RunDir {
    pub fn create(cfg: &Config, command: &str) -> Result<Self, CliError> {
        let hash = cfg.hash();
        let dir = cfg.out_dir.join(command).join(&hash[..12]);
        fs::create_dir_all(&dir)?;
        Ok(RunDir { dir, command: command.into(), hash, seed: cfg.seed, files: BTreeMap::new(), volatile: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn header(&self) -> String {
        format!("# config_hash={}, seed={}, version={}\n", self.hash, self.seed, VERSION)
    }

    fn render<F>(&self, body: F) -> Result<Vec<u8>, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> metagrad::Result<()>,
    {
        let mut bytes = self.header().into_bytes();
        body(&mut bytes)?;
        Ok(bytes)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> metagrad::Result<()>,
    {
        let bytes = self.render(body)?;
        self.put(name, &bytes)
    }

    /// A CSV left out of the checksum list because it records wall times.
    pub fn write_volatile_csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> metagrad::Result<()>,
    {
        let bytes = self.render(body)?;
        fs::write(self.dir.join(name), bytes)?;
        self.volatile.push(name.into());
        Ok(())
    }

    pub fn write_snapshot(&mut self, name: &str, mut snap: Snapshot) -> Result<(), CliError> {
        snap.meta.insert("config_hash".into(), self.hash.clone());
        snap.meta.insert("seed".into(), self.seed.to_string());
        snap.meta.insert("version".into(), VERSION.into());
        self.put(name, &snap.to_bytes())
    }

    /// Writes `config.toml` and `manifest.json` and returns the directory.
    pub fn finish(mut self, cfg: &Config) -> Result<PathBuf, CliError> {
        let toml = format!("{}{}", self.header(), cfg.keyed().to_toml());
        self.put("config.toml", toml.as_bytes())?;
        let manifest = Manifest {
            command: &self.command,
            config_hash: &self.hash,
            seed: self.seed,
            version: VERSION,
            files: &self.files,
            volatile: &self.volatile,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(self.dir.join("manifest.json"), json + "\n")?;
        Ok(self.dir)
    }
}
