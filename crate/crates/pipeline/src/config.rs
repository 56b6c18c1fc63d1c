//! The single pipeline configuration: one TOML file plus `key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wormscreen::fluor::BlobConfig;
use wormscreen::phenotype::{CvConfig, PhenotypeConfig};
use wormscreen::segmenter::SegmenterConfig;
use wormscreen::synthplate::PlateConfig;

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Root of all pipeline state: models, caches, outputs, run log.
    pub workspace: PathBuf,
    /// Plate directory (manifest, images, annotations); relative paths are
    /// taken from the workspace.
    pub plate: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workspace: PathBuf::from("wormscreen-work"),
            plate: PathBuf::from("plate"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeConfig {
    pub blob: BlobConfig,
    pub rounds: usize,
    pub seed: u64,
    /// Minimum overlap with a ground-truth stripe mask for a detected blob to
    /// be labeled a stripe when training from synthetic truth.
    pub label_overlap: f64,
}

impl Default for StripeConfig {
    fn default() -> Self {
        StripeConfig {
            blob: BlobConfig::default(),
            rounds: 50,
            seed: 0,
            label_overlap: 0.15,
        }
    }
}

/// Which wells the training commands use when none are named.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSelection {
    pub segmenter_wells: Vec<String>,
    /// Cap on automatically chosen annotated wells.
    pub segmenter_max_images: usize,
    pub stripe_wells: Vec<String>,
    pub stripe_max_images: usize,
}

impl Default for TrainingSelection {
    fn default() -> Self {
        TrainingSelection {
            segmenter_wells: Vec::new(),
            segmenter_max_images: 6,
            stripe_wells: Vec::new(),
            stripe_max_images: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub addr: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: "127.0.0.1:8750".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub histogram_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { histogram_bins: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Filter bank, segment lengths, angle step, rectangle layout, boosting
    /// and mining parameters of the worm detector.
    pub segmenter: SegmenterConfig,
    pub stripes: StripeConfig,
    pub phenotype: PhenotypeConfig,
    pub cv: CvConfig,
    /// Synthetic plate written by `synth --plate`.
    pub synth: PlateConfig,
    pub training: TrainingSelection,
    pub report: ReportConfig,
    pub server: ServerConfig,
}

/// Set `dotted.key` in a TOML table, creating intermediate tables.
fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("bad key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("{key}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal, or a bare string when the text is not one.
fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` (defaults when `None`) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(PipelineError::io(p))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.stripes.rounds == 0 || self.phenotype.rounds == 0 {
            return Err(PipelineError::Config("boosting rounds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stripes.label_overlap) {
            return Err(PipelineError::Config("stripes.label_overlap must lie in [0, 1]".into()));
        }
        if self.phenotype.members == 0 {
            return Err(PipelineError::Config("phenotype.members must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn workspace_root(&self) -> &Path {
        &self.paths.workspace
    }

    pub fn plate_dir(&self) -> PathBuf {
        self.paths.workspace.join(&self.paths.plate)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use wormscreen::phenotype::Phenotype;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("", &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "[segmenter]\nangle_step_deg = 45.0\n[phenotype]\nmembers = 5\n";
        let cfg = PipelineConfig::from_toml(
            text,
            &[
                "phenotype.members=9".into(),
                "synth.mutant=\"lNR\"".into(),
                "paths.workspace=/tmp/w".into(),
                "segmenter.scan_lengths=[12.0, 20.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.segmenter.angle_step_deg, 45.0);
        assert_eq!(cfg.phenotype.members, 9);
        assert_eq!(cfg.synth.mutant, Phenotype::Lnr);
        assert_eq!(cfg.paths.workspace, PathBuf::from("/tmp/w"));
        assert_eq!(cfg.segmenter.scan_lengths, vec![12.0, 20.0]);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        assert!(PipelineConfig::from_toml("", &["phenotype.members".into()]).is_err());
        assert!(PipelineConfig::from_toml("", &["phenotype.members=\"many\"".into()]).is_err());
        assert!(PipelineConfig::from_toml("", &["phenotype.members=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.cv.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
