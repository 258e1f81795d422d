use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uvcycle::global::GlobalRunConfig;
use uvcycle::multichart::ChartRunConfig;
use uvcycle::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Global,
    Multichart,
    Pointcloud,
}

/// Resolved configuration, tagged by pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "lowercase")]
pub enum RunConfig {
    Global(GlobalRunConfig),
    Charts(ChartRunConfig),
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        match self {
            RunConfig::Global(c) => c.seed,
            RunConfig::Charts(c) => c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a training command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub mode: Mode,
    pub input: InputRef,
    pub config: RunConfig,
    pub seed: u64,
    /// Artifact role -> file name inside the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        uvcycle::export::write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        uvcycle::export::read_json(path)
    }

    pub fn verify_input(&self) -> Result<()> {
        let now = sha256_file(&self.input.path)?;
        if now != self.input.sha256 {
            return Err(Error::Argument(format!(
                "{} changed since the run (sha256 {} != {})",
                self.input.path.display(),
                now,
                self.input.sha256
            )));
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.obj");
        std::fs::write(&input, "v 0 0 0\n").unwrap();
        let m = RunManifest {
            tool_version: "0.1.0".into(),
            mode: Mode::Global,
            input: InputRef {
                path: input.clone(),
                sha256: sha256_file(&input).unwrap(),
            },
            config: RunConfig::Global(GlobalRunConfig {
                seed: 9,
                ..Default::default()
            }),
            seed: 9,
            artifacts: [("obj".to_string(), "in_uv.obj".to_string())].into(),
            wall_seconds: 0.25,
        };
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        m.verify_input().unwrap();
        std::fs::write(&input, "v 1 0 0\n").unwrap();
        assert!(m.verify_input().is_err());
    }

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
