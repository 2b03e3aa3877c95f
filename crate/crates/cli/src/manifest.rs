use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    #[serde(default)]
    pub residuals: serde_json::Value,
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, elapsed: Duration) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            wall_time_s: elapsed.as_secs_f64(),
            residuals: serde_json::Value::Null,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    /// Appends one JSON line to the manifest beside the first output.
    pub fn append(&self) -> Result<PathBuf> {
        let first = self.outputs.first().map(PathBuf::from).unwrap_or_default();
        let dir = first.parent().map(Path::to_path_buf).unwrap_or_default();
        let path = dir.join(FILE_NAME);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(f, "{}", serde_json::to_string(self)?)?;
        Ok(path)
    }
}

pub fn read_all(path: &Path) -> Result<Vec<RunManifest>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}
