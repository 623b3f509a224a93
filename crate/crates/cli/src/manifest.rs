//! Reproducibility manifests.
//!
//! Every run directory gets a `manifest.json`: the configuration echo, the
//! root seed, the code version, per-stage wall times, and a checksummed
//! inventory of every output file.  Re-running with the same configuration,
//! seed, and worker count reproduces the inventoried files byte for byte;
//! `gradgibbs report` re-verifies the checksums.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// "ok", "check-failed", or "error".
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub root_seed: u64,
    /// Worker threads the pool actually ran with.
    pub workers: usize,
    pub config: serde_json::Value,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputRecord>,
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not a manifest: {e}", path.display())))
}

/// An in-progress run: the output directory plus the manifest being built.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn create(command: &str, dir: &Path, cfg: &RunConfig) -> CliResult<Run> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create --out {}: {e}", dir.display())))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: "gradgibbs".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                status: "incomplete".into(),
                error: None,
                root_seed: cfg.seed,
                workers: rayon::current_num_threads(),
                config: cfg.echo(),
                timings: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Runs a stage under a wall-clock timer; the timing is recorded even
    /// when the stage fails, so an error manifest shows where time went.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f();
        self.manifest.timings.push(StageTiming {
            stage: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    /// Serializes `value` as pretty JSON into the run directory and
    /// inventories it.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, value).map_err(gradgibbs::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        drop(w);
        self.register(name)
    }

    /// Writes CSV rows (header first) into the run directory and
    /// inventories the file.
    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        drop(w);
        self.register(name)
    }

    /// Hashes an already-written file in the run directory into the
    /// inventory.
    pub fn register(&mut self, name: &str) -> CliResult<()> {
        let (bytes, sha256) = hash_file(&self.dir.join(name))?;
        self.manifest.outputs.push(OutputRecord {
            path: name.into(),
            bytes,
            sha256,
        });
        Ok(())
    }

    /// Writes the manifest with the final status.  `failure` of `None`
    /// means the run completed cleanly.
    pub fn finish(mut self, failure: Option<&CliError>) -> CliResult<()> {
        match failure {
            None => self.manifest.status = "ok".into(),
            Some(e) => {
                self.manifest.status = e.status().into();
                self.manifest.error = Some(e.to_string());
            }
        }
        let path = self.dir.join(MANIFEST_NAME);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &self.manifest).map_err(gradgibbs::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> CliResult<(u64, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    let mut bytes = 0u64;
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok((bytes, hex))
}
