use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use nerlab::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: &[String]) -> Self {
        let started_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                tool: "nerlab",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                args: args.to_vec(),
                config: serde_json::Value::Null,
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_s,
                wall_clock_s: 0.0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(InputFingerprint {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn config<C: Serialize>(&mut self, config: &C) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<RunManifest> {
        let path = out_dir.join(MANIFEST_FILE);
        self.manifest.outputs.push(path.clone());
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
