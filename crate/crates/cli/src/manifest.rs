//! Run manifests. Every subcommand writes one beside its outputs so a run
//! can be audited and replayed: the resolved configuration, the files it
//! read and wrote, and a SHA-256 of each artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tensorcast::{Error, Result};

#[derive(Serialize)]
pub struct Manifest {
    subcommand: &'static str,
    /// Every default materialized, so the manifest alone reproduces the run.
    config: serde_json::Value,
    /// The seed the run pivots on; per-stage seeds live in `config`.
    seed: Option<u64>,
    inputs: BTreeMap<&'static str, PathBuf>,
    outputs: BTreeMap<&'static str, PathBuf>,
    /// SHA-256 per artifact file name.
    checksums: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Manifest {
            subcommand,
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            checksums: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &'static str, path: impl Into<PathBuf>) {
        self.inputs.insert(role, path.into());
    }

    /// Records an output file and checksums its current content, so call it
    /// after the file is written.
    pub fn artifact(&mut self, role: &'static str, path: impl Into<PathBuf>) -> Result<()> {
        let path = path.into();
        let bytes = std::fs::read(&path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.checksums.insert(name, hex(&Sha256::digest(&bytes)));
        self.outputs.insert(role, path);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
        Ok(w.flush()?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
