use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use tar_core::TarError;

pub const RUN_MANIFEST: &str = "run.json";

/// Record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

pub struct RunClock {
    started: f64,
    t0: Instant,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunClock {
    pub fn start() -> Self {
        RunClock {
            started: unix_now(),
            t0: Instant::now(),
        }
    }

    pub fn finish(
        &self,
        command: &str,
        config: &impl Serialize,
        seed: Option<u64>,
        threads: usize,
        outputs: Vec<PathBuf>,
    ) -> anyhow::Result<RunManifest> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            threads,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started,
            finished_unix: unix_now(),
            wall_seconds: self.t0.elapsed().as_secs_f64(),
            outputs,
        })
    }
}

/// Write through a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TarError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| TarError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| TarError::io(path, e))?;
    Ok(())
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
