//! Output directories and their run manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Command arguments with every default filled in.
    pub config: serde_json::Value,
    /// Quantities derived from the arguments and the dataset.
    pub resolved: serde_json::Value,
    pub dataset_fingerprint: Option<String>,
    pub seed: u64,
    pub threads: usize,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Collects the artifacts written into one output directory.
pub struct Outputs {
    dir: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
    started_unix_ms: u128,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> andiff_core::Result<()>,
    {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        self.artifacts.push(rel.to_string());
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        config: &impl Serialize,
        resolved: serde_json::Value,
        dataset_fingerprint: Option<String>,
        seed: u64,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            resolved,
            dataset_fingerprint,
            seed,
            threads: rayon::current_num_threads(),
            artifacts: self.artifacts,
            started_unix_ms: self.started_unix_ms,
            elapsed_ms: self.started.elapsed().as_secs_f64() * 1e3,
        };
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}
