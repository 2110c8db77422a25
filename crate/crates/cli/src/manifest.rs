//! Run manifests: what went in, what came out, and how long each stage took.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use labelfuse::{Error, Result};

#[derive(Debug, Serialize)]
pub struct InputChecksum {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputChecksum>,
    pub stages: Vec<StageTime>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            stages: Vec::new(),
            outputs: Vec::new(),
            clock: None,
        }
    }

    /// Records the checksum of an input file already read into memory.
    pub fn input_bytes(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputChecksum {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.input_bytes(path, &bytes);
        Ok(())
    }

    /// Closes the running stage, if any, and starts timing `name`.
    pub fn stage(&mut self, name: &str) {
        self.finish_stage();
        log::info!("{}: {name}", self.command);
        self.clock = Some((name.to_string(), Instant::now()));
    }

    fn finish_stage(&mut self) {
        if let Some((stage, start)) = self.clock.take() {
            self.stages.push(StageTime {
                stage,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest as JSON through a temporary file and a rename, so
    /// readers never see a partial manifest.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finish_stage();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, json + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}
