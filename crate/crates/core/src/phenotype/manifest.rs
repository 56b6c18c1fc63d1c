use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PhenotypeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phenotype {
    #[serde(rename = "WT")]
    Wt,
    #[serde(rename = "lNR")]
    Lnr,
    #[serde(rename = "hNR")]
    Hnr,
}

impl Phenotype {
    pub const ALL: [Phenotype; 3] = [Phenotype::Wt, Phenotype::Lnr, Phenotype::Hnr];

    pub fn as_str(self) -> &'static str {
        match self {
            Phenotype::Wt => "WT",
            Phenotype::Lnr => "lNR",
            Phenotype::Hnr => "hNR",
        }
    }
}

impl fmt::Display for Phenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phenotype {
    type Err = PhenotypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phenotype::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PhenotypeError::Manifest(format!("unknown phenotype {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Control,
    Test,
}

/// One row of the plate manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellRecord {
    pub plate_id: String,
    pub well_id: String,
    pub bf_path: PathBuf,
    pub fl_path: PathBuf,
    pub role: Role,
    pub known_label: Option<Phenotype>,
}

impl WellRecord {
    pub fn validate(&self) -> Result<(), PhenotypeError> {
        if self.role == Role::Control && self.known_label.is_none() {
            return Err(PhenotypeError::Manifest(format!(
                "control well {} has no known label",
                self.well_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateManifest {
    pub wells: Vec<WellRecord>,
    /// Directory that relative image paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PlateManifest {
    pub fn validate(&self) -> Result<(), PhenotypeError> {
        let mut seen = std::collections::HashSet::new();
        for w in &self.wells {
            w.validate()?;
            if !seen.insert((&w.plate_id, &w.well_id)) {
                return Err(PhenotypeError::Manifest(format!(
                    "duplicate well {} on plate {}",
                    w.well_id, w.plate_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_csv(&self) -> Result<String, PhenotypeError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.wells {
            w.serialize(rec).map_err(|e| PhenotypeError::Manifest(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| PhenotypeError::Manifest(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| PhenotypeError::Manifest(e.to_string()))
    }

    pub fn from_csv(text: &str, base_dir: &Path) -> Result<Self, PhenotypeError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let wells = r
            .deserialize()
            .collect::<Result<Vec<WellRecord>, _>>()
            .map_err(|e| PhenotypeError::Manifest(e.to_string()))?;
        let m = PlateManifest {
            wells,
            base_dir: base_dir.to_path_buf(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, PhenotypeError> {
        let text = std::fs::read_to_string(path).map_err(|e| PhenotypeError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_csv(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<(), PhenotypeError> {
        let io = |e| PhenotypeError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(path, self.to_csv()?).map_err(|e| PhenotypeError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
