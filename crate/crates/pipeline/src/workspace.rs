//! Filesystem layout of a pipeline workspace and the versioned per-image
//! documents (worm annotations, stripe labels) edited through the service.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wormscreen::phenotype::PlateManifest;
use wormscreen::synthplate::PlateLayout;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub plate: PathBuf,
}

impl Workspace {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Workspace {
            root: cfg.paths.workspace.clone(),
            plate: cfg.plate_dir(),
        }
    }

    pub fn runs_log(&self) -> PathBuf {
        self.root.join("runs.jsonl")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn score_cache(&self) -> PathBuf {
        self.root.join("cache").join("scores")
    }

    pub fn outputs(&self, kind: &str) -> PathBuf {
        self.root.join("outputs").join(kind)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest_path(&self) -> PathBuf {
        PlateLayout::new(&self.plate).manifest()
    }

    pub fn load_manifest(&self, path: Option<&Path>) -> Result<PlateManifest> {
        let p = path.map(Path::to_path_buf).unwrap_or_else(|| self.manifest_path());
        Ok(PlateManifest::load(&p)?)
    }

    pub fn annotations(&self) -> DocumentStore {
        DocumentStore::new(self.plate.join("annotations"))
    }

    pub fn stripe_labels(&self) -> DocumentStore {
        DocumentStore::new(self.plate.join("stripe_labels"))
    }

    pub fn truth_worm_mask(&self, well: &str) -> PathBuf {
        PlateLayout::new(&self.plate).worm_mask(well)
    }

    pub fn truth_stripe_mask(&self, well: &str) -> PathBuf {
        PlateLayout::new(&self.plate).stripe_mask(well)
    }
}

/// Write via a temporary file in the same directory and rename, so readers
/// see either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(PipelineError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(PipelineError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(PipelineError::json(path.display().to_string()))?;
    atomic_write(path, &bytes)
}

/// Ids become file names; keep them to a safe alphabet.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Invalid(format!("bad id {id:?}")))
    }
}

/// One JSON document per image id with a version counter. The payload is
/// stored exactly as written. A document that exists without a counter
/// (written by `synth`, say) is at version 1; a missing one at version 0.
#[derive(Clone, Debug)]
pub struct DocumentStore {
    pub dir: PathBuf,
}

impl DocumentStore {
    pub fn new(dir: PathBuf) -> Self {
        DocumentStore { dir }
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn version_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.version"))
    }

    pub fn version(&self, id: &str) -> Result<u64> {
        let vp = self.version_path(id);
        match std::fs::read_to_string(&vp) {
            Ok(t) => t
                .trim()
                .parse()
                .map_err(|_| PipelineError::Invalid(format!("{}: bad version counter", vp.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(u64::from(self.path(id).exists())),
            Err(e) => Err(PipelineError::Io { path: vp, source: e }),
        }
    }

    /// Payload and version, `None` when the document does not exist.
    pub fn get(&self, id: &str) -> Result<Option<(Vec<u8>, u64)>> {
        check_id(id)?;
        let p = self.path(id);
        match std::fs::read(&p) {
            Ok(bytes) => Ok(Some((bytes, self.version(id)?))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::Io { path: p, source: e }),
        }
    }

    /// Store `bytes` if the current version equals `expected`; returns the
    /// new version. Callers serialize writers to the same id.
    pub fn put(&self, id: &str, bytes: &[u8], expected: u64) -> Result<u64> {
        check_id(id)?;
        let current = self.version(id)?;
        if current != expected {
            return Err(PipelineError::Conflict { expected, current });
        }
        let next = current + 1;
        atomic_write(&self.path(id), bytes)?;
        atomic_write(&self.version_path(id), next.to_string().as_bytes())?;
        Ok(next)
    }

    pub fn ids(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(PipelineError::Io { path: self.dir.clone(), source: e }),
        };
        for e in entries {
            let e = e.map_err(PipelineError::io(&self.dir))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                if !id.starts_with('.') {
                    out.push(id.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_advance_and_stale_writes_fail() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::new(dir.path().to_path_buf());
        assert_eq!(store.get("A01").unwrap(), None);
        assert_eq!(store.put("A01", b"{\"a\":1}", 0).unwrap(), 1);
        assert_eq!(store.put("A01", b"{\"a\":2}", 1).unwrap(), 2);
        match store.put("A01", b"{\"a\":3}", 1) {
            Err(PipelineError::Conflict { expected: 1, current: 2 }) => {}
            other => panic!("expected conflict, got {other:?}"),
        }
        assert_eq!(store.get("A01").unwrap(), Some((b"{\"a\":2}".to_vec(), 2)));
        assert_eq!(store.ids().unwrap(), vec!["A01".to_string()]);
    }

    #[test]
    fn preexisting_document_is_version_one() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("B02.json"), b"{}").unwrap();
        let store = DocumentStore::new(dir.path().to_path_buf());
        assert_eq!(store.version("B02").unwrap(), 1);
        assert!(store.put("B02", b"{}", 0).is_err());
        assert_eq!(store.put("B02", b"[]", 1).unwrap(), 2);
    }

    #[test]
    fn ids_are_sanitized() {
        for bad in ["", "../x", "a/b", ".hidden", "a b"] {
            assert!(check_id(bad).is_err(), "{bad}");
        }
        check_id("A01_fl-2.v").unwrap();
    }
}
