//! Append-only run log, one JSON object per line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{PipelineError, Result};
use crate::models::ModelKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    /// Input path to SHA-256 of its bytes.
    pub input_hashes: BTreeMap<String, String>,
    pub model_ids: BTreeMap<ModelKind, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
    pub status: String,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    Ok(sha256_hex(&bytes))
}

impl RunRecord {
    pub fn append(&self, log: &Path) -> Result<()> {
        if let Some(dir) = log.parent() {
            std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
        }
        let mut line = serde_json::to_vec(self).map_err(PipelineError::json("run record"))?;
        line.push(b'\n');
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(log)
            .map_err(PipelineError::io(log))?;
        f.write_all(&line).map_err(PipelineError::io(log))
    }
}

pub fn read_log(log: &Path) -> Result<Vec<RunRecord>> {
    let text = match std::fs::read_to_string(log) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::Io { path: log.to_path_buf(), source: e }),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(PipelineError::json(log.display().to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(command: &str) -> RunRecord {
        RunRecord {
            command: command.into(),
            config_hash: "abc".into(),
            input_hashes: BTreeMap::from([("in.pgm".to_string(), sha256_hex(b"x"))]),
            model_ids: BTreeMap::from([(ModelKind::Segmenter, "0123456789abcdef".to_string())]),
            started_unix_ms: 1,
            finished_unix_ms: 2,
            outputs: vec!["out.json".into()],
            status: "ok".into(),
        }
    }

    #[test]
    fn appends_preserve_earlier_records() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("runs.jsonl");
        record("segment").append(&log).unwrap();
        let first = std::fs::read(&log).unwrap();
        record("eval-seg").append(&log).unwrap();
        let both = std::fs::read(&log).unwrap();
        assert!(both.starts_with(&first));
        let got = read_log(&log).unwrap();
        assert_eq!(got, vec![record("segment"), record("eval-seg")]);
    }
}
