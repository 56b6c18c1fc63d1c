use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synth_scene, SynthConfig, SynthError, SynthScene};
use crate::boosting::derive_seed;
use crate::imagecore::io::{write_label_pgm, write_mask_pgm, write_pgm};
use crate::phenotype::{Phenotype, PlateManifest, Role, WellRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateConfig {
    pub plate_id: String,
    pub wells: usize,
    /// Class of the non-wild-type half of the plate.
    pub mutant: Phenotype,
    pub base: SynthConfig,
    /// Probability that a well holds only a few worms.
    pub sparse_fraction: f64,
    /// Inclusive worm count range of sparse wells.
    pub sparse_worm_count: (usize, usize),
    pub seed: u64,
}

impl Default for PlateConfig {
    fn default() -> Self {
        PlateConfig {
            plate_id: "synth".into(),
            wells: 96,
            mutant: Phenotype::Hnr,
            base: SynthConfig::default(),
            sparse_fraction: 0.0,
            sparse_worm_count: (1, 2),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub well_id: String,
    pub config: SynthConfig,
}

/// `A01` .. `H12` on a 96-well plate, `W0001` style beyond that.
pub fn well_name(index: usize, wells: usize) -> String {
    if wells <= 96 {
        format!("{}{:02}", (b'A' + (index / 12) as u8) as char, index % 12 + 1)
    } else {
        format!("W{:04}", index + 1)
    }
}

/// Per-well configs: half wild type, half `mutant`, in a seeded random
/// arrangement, each well with its own scene seed. Scene geometry depends
/// only on the plate seed and the well index.
pub fn plate_wells(cfg: &PlateConfig) -> Vec<WellSpec> {
    let mutants = cfg.wells / 2;
    let mut labels: Vec<Phenotype> = (0..cfg.wells)
        .map(|i| if i < mutants { cfg.mutant } else { Phenotype::Wt })
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = derive_seed(cfg.seed, i + 1);
            let mut config = cfg.base.clone().with_phenotype(p).with_seed(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
            if rng.random::<f64>() < cfg.sparse_fraction {
                let (lo, hi) = cfg.sparse_worm_count;
                config.worm_count = rng.random_range(lo..=hi.max(lo));
            }
            WellSpec {
                well_id: well_name(i, cfg.wells),
                config,
            }
        })
        .collect()
}

/// File layout of a generated plate directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlateLayout {
    pub root: PathBuf,
}

impl PlateLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn bf_rel(well: &str) -> PathBuf {
        PathBuf::from(format!("images/{well}_bf.pgm"))
    }

    pub fn fl_rel(well: &str) -> PathBuf {
        PathBuf::from(format!("images/{well}_fl.pgm"))
    }

    pub fn worm_mask(&self, well: &str) -> PathBuf {
        self.root.join(format!("truth/{well}_worms.pgm"))
    }

    pub fn worm_labels(&self, well: &str) -> PathBuf {
        self.root.join(format!("truth/{well}_labels.pgm"))
    }

    pub fn stripe_mask(&self, well: &str) -> PathBuf {
        self.root.join(format!("truth/{well}_stripes.pgm"))
    }

    pub fn truth_summary(&self, well: &str) -> PathBuf {
        self.root.join(format!("truth/{well}.json"))
    }

    pub fn annotations(&self, well: &str) -> PathBuf {
        self.root.join(format!("annotations/{well}.json"))
    }
}

/// Scalar ground truth stored next to the masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub well_id: String,
    pub phenotype: Phenotype,
    pub gain: f64,
    pub stripe_ratios: Vec<f64>,
    pub decoys: Vec<(f64, f64)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let io = |e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| SynthError::Manifest(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_well(layout: &PlateLayout, spec: &WellSpec, scene: &SynthScene) -> Result<(), SynthError> {
    let id = &spec.well_id;
    write_pgm(&layout.root.join(PlateLayout::bf_rel(id)), &scene.bf, true)?;
    write_pgm(&layout.root.join(PlateLayout::fl_rel(id)), &scene.fl, true)?;
    write_mask_pgm(&layout.worm_mask(id), &scene.worm_union())?;
    write_mask_pgm(&layout.stripe_mask(id), &scene.stripe_union())?;
    let (w, h) = (scene.width(), scene.height());
    let mut labels = vec![0u16; w * h];
    for (k, m) in scene.worm_masks.iter().enumerate() {
        for (l, &b) in labels.iter_mut().zip(m.bits()) {
            if b {
                *l = k as u16 + 1;
            }
        }
    }
    write_label_pgm(&layout.worm_labels(id), w, h, &labels)?;
    write_json(&layout.annotations(id), &scene.annotation_file(id))?;
    write_json(
        &layout.truth_summary(id),
        &TruthSummary {
            well_id: id.clone(),
            phenotype: spec.config.phenotype,
            gain: scene.gain,
            stripe_ratios: (0..scene.worm_masks.len()).map(|i| scene.stripe_ratio(i)).collect(),
            decoys: scene.decoys.clone(),
        },
    )
}

/// Render and write every well, then the manifest. Wells render in parallel;
/// the first failing well (in plate order) is reported.
pub fn synth_plate(plate_id: &str, wells: &[WellSpec], out_dir: &Path) -> Result<PlateManifest, SynthError> {
    if wells.len() < 2 {
        return Err(SynthError::Config("a plate needs at least 2 wells".into()));
    }
    let layout = PlateLayout::new(out_dir);
    let results: Vec<Result<(), SynthError>> = wells
        .par_iter()
        .map(|spec| {
            synth_scene(&spec.config)
                .and_then(|scene| write_well(&layout, spec, &scene))
                .map_err(|e| SynthError::Well {
                    well_id: spec.well_id.clone(),
                    source: Box::new(e),
                })
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    let manifest = PlateManifest {
        wells: wells
            .iter()
            .map(|spec| WellRecord {
                plate_id: plate_id.to_string(),
                well_id: spec.well_id.clone(),
                bf_path: PlateLayout::bf_rel(&spec.well_id),
                fl_path: PlateLayout::fl_rel(&spec.well_id),
                role: Role::Control,
                known_label: Some(spec.config.phenotype),
            })
            .collect(),
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&layout.manifest()).map_err(|e| SynthError::Manifest(e.to_string()))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_names() {
        assert_eq!(well_name(0, 96), "A01");
        assert_eq!(well_name(11, 96), "A12");
        assert_eq!(well_name(95, 96), "H12");
        assert_eq!(well_name(99, 384), "W0100");
    }

    #[test]
    fn default_plate_is_balanced() {
        let wells = plate_wells(&PlateConfig::default());
        assert_eq!(wells.len(), 96);
        let mutants = wells.iter().filter(|w| w.config.phenotype == Phenotype::Hnr).count();
        assert_eq!(mutants, 48);
        let mut seeds: Vec<u64> = wells.iter().map(|w| w.config.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 96);
    }
}
