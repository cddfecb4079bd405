use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A file read or written by a run, with the SHA-256 of its bytes.
#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation, enough to re-execute it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub git_describe: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
}

/// Bookkeeping for one command: every byte in and out goes through here.
pub struct Run {
    pub manifest: RunManifest,
    start: Instant,
    /// Where the manifest goes when no explicit path is given.
    pub default_manifest_path: Option<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl Run {
    pub fn new(command: &str, argv: Vec<String>, threads: usize) -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Self {
            manifest: RunManifest {
                command: command.into(),
                argv,
                version: env!("CARGO_PKG_VERSION"),
                git_describe: git_describe(),
                seed: None,
                threads,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_s: started.as_secs_f64(),
                wall_time_s: 0.0,
            },
            start: Instant::now(),
            default_manifest_path: None,
        }
    }

    /// Reads a whole file, or stdin for `-`.
    pub fn read(&mut self, path: &str) -> Result<Vec<u8>> {
        let bytes = if path == "-" {
            let mut buf = Vec::new();
            std::io::stdin().lock().read_to_end(&mut buf).context("reading stdin")?;
            buf
        } else {
            std::fs::read(path).with_context(|| format!("reading {path}"))?
        };
        self.manifest.inputs.push(FileDigest {
            path: path.into(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn read_path(&mut self, path: &Path) -> Result<Vec<u8>> {
        self.read(&path.to_string_lossy())
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read_path(path)?;
        String::from_utf8(bytes).map_err(|_| fome::Error::Format(format!("{} is not UTF-8", path.display())).into())
    }

    /// Writes a whole file, or stdout for `-`.
    pub fn write(&mut self, path: &str, bytes: &[u8]) -> Result<()> {
        if path == "-" {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).context("writing stdout")?;
            out.flush().context("writing stdout")?;
        } else {
            std::fs::write(path, bytes).with_context(|| format!("writing {path}"))?;
        }
        self.manifest.outputs.push(FileDigest {
            path: path.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_path(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.write(&path.to_string_lossy(), bytes)
    }

    /// Stamps the wall time and writes the manifest to `explicit`, the
    /// default path, or stderr.
    pub fn finish(mut self, explicit: Option<&Path>) -> Result<()> {
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self.manifest)?;
        match explicit.or(self.default_manifest_path.as_deref()) {
            Some(p) if p.as_os_str() == "-" => eprintln!("{json}"),
            Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
            None => eprintln!("{json}"),
        }
        Ok(())
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
