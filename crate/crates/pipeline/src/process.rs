//! Per-well orchestration: brightfield -> dense scores -> worm regions;
//! fluorescence -> blobs -> stripes; regions + stripes -> well decision.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wormscreen::fluor::{classify_stripes, detect_blobs, Blob, BlobConfig, StripeModel};
use wormscreen::imagecore::io::decode_image;
use wormscreen::imagecore::GrayImage;
use wormscreen::phenotype::{
    classify_well, process_well, Phenotype, PlateManifest, ProcessedWell, Task, WellRecord, WellScore,
};
use wormscreen::segmenter::{ScoreImage, SegmentationResult, SegmenterModel};

use crate::config::sha256_hex;
use crate::error::{PipelineError, Result};
use crate::models::{Loaded, ModelSet};
use crate::workspace::atomic_write;

/// An image together with the hash of its file bytes.
pub struct LoadedImage {
    pub path: PathBuf,
    pub image: GrayImage,
    pub sha256: String,
}

pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    let image = decode_image(&bytes)?;
    Ok(LoadedImage {
        path: path.to_path_buf(),
        image,
        sha256: sha256_hex(&bytes),
    })
}

/// Dense score images keyed by detector id and brightfield content, so a
/// brightfield image is scanned once per detector.
#[derive(Clone, Debug, Default)]
pub struct ScoreCache {
    pub dir: Option<PathBuf>,
}

impl ScoreCache {
    pub fn at(dir: PathBuf) -> Self {
        ScoreCache { dir: Some(dir) }
    }

    fn path(&self, model_id: &str, bf_hash: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(model_id).join(format!("{}.json", &bf_hash[..32])))
    }

    pub fn scores(&self, model: &Loaded<SegmenterModel>, bf: &LoadedImage) -> Result<ScoreImage> {
        let path = self.path(&model.id, &bf.sha256);
        if let Some(p) = &path {
            if let Ok(bytes) = std::fs::read(p) {
                if let Ok(s) = serde_json::from_slice::<ScoreImage>(&bytes) {
                    if (s.width, s.height) == bf.image.dims() {
                        return Ok(s);
                    }
                }
            }
        }
        let m = &model.model;
        let scores = m.score(&m.feature_stack(&bf.image)?)?;
        if let Some(p) = &path {
            let bytes = serde_json::to_vec(&scores).map_err(PipelineError::json("score image"))?;
            atomic_write(p, &bytes)?;
        }
        Ok(scores)
    }
}

pub struct Segmented {
    pub scores: ScoreImage,
    pub seg: SegmentationResult,
}

pub fn segment(model: &Loaded<SegmenterModel>, bf: &LoadedImage, cache: &ScoreCache) -> Result<Segmented> {
    let scores = cache.scores(model, bf)?;
    let mut seg = model.model.segment_scores(&scores);
    seg.model_id = model.id.clone();
    Ok(Segmented { scores, seg })
}

/// Blobs of a fluorescence image, featurized against its segmentation.
/// Blob ids are stable for a given image, detector and blob settings, which
/// is what stripe label files refer to.
pub fn blobs_for(fl: &GrayImage, blob: &BlobConfig, segmented: Option<&Segmented>) -> Result<Vec<Blob>> {
    if let Some(s) = segmented {
        if s.seg.mask.dims() != fl.dims() {
            return Err(PipelineError::Invalid(format!(
                "fluorescence image is {:?} but brightfield is {:?}",
                fl.dims(),
                s.seg.mask.dims()
            )));
        }
    }
    Ok(detect_blobs(fl, blob, segmented.map(|s| &s.seg.mask), segmented.map(|s| &s.scores)))
}

pub struct WellAnalysis {
    pub record: WellRecord,
    pub segmented: Segmented,
    pub blobs: Vec<Blob>,
    pub stripes: Vec<Blob>,
    pub processed: ProcessedWell,
    pub input_hashes: Vec<(PathBuf, String)>,
}

pub fn analyze_well(
    manifest: &PlateManifest,
    record: &WellRecord,
    segmenter: &Loaded<SegmenterModel>,
    stripe: &Loaded<StripeModel>,
    cache: &ScoreCache,
) -> Result<WellAnalysis> {
    let bf = load_image(&manifest.resolve(&record.bf_path))?;
    let fl = load_image(&manifest.resolve(&record.fl_path))?;
    let segmented = segment(segmenter, &bf, cache)?;
    let blobs = blobs_for(&fl.image, &stripe.model.blob, Some(&segmented))?;
    let stripes = classify_stripes(&stripe.model, &blobs);
    let processed = process_well(&record.well_id, record.known_label, &segmented.seg.regions, &stripes, &fl.image);
    Ok(WellAnalysis {
        record: record.clone(),
        segmented,
        blobs,
        stripes,
        processed,
        input_hashes: vec![(bf.path, bf.sha256), (fl.path, fl.sha256)],
    })
}

/// Analyze every well in parallel, keeping manifest order.
pub fn analyze_all(
    manifest: &PlateManifest,
    wells: &[&WellRecord],
    models: &ModelSet,
    cache: &ScoreCache,
) -> Result<Vec<Result<WellAnalysis>>> {
    let segmenter = models.segmenter()?;
    let stripe = models.stripe()?;
    Ok(wells
        .par_iter()
        .map(|r| analyze_well(manifest, r, segmenter, stripe, cache))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellResult {
    pub plate_id: String,
    pub well_id: String,
    pub known_label: Option<Phenotype>,
    pub status: WellStatus,
    pub error: Option<String>,
    pub regions: usize,
    pub blobs: usize,
    pub stripes: usize,
    pub mean_worm_intensity: f64,
    pub stripe_ratio: f64,
    pub score: Option<WellScore>,
}

impl WellResult {
    fn failed(r: &WellRecord, e: &PipelineError) -> Self {
        WellResult {
            plate_id: r.plate_id.clone(),
            well_id: r.well_id.clone(),
            known_label: r.known_label,
            status: WellStatus::Failed,
            error: Some(e.to_string()),
            regions: 0,
            blobs: 0,
            stripes: 0,
            mean_worm_intensity: 0.0,
            stripe_ratio: 0.0,
            score: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub wells: usize,
    pub ok: usize,
    pub failed: usize,
    pub abstained: usize,
    pub called: BTreeMap<Phenotype, usize>,
    /// Among wells with a known label that were called.
    pub called_wrong: usize,
}

impl RunSummary {
    pub fn of(results: &[WellResult]) -> Self {
        let mut s = RunSummary {
            wells: results.len(),
            ..RunSummary::default()
        };
        for r in results {
            match (&r.status, &r.score) {
                (WellStatus::Ok, Some(score)) => {
                    s.ok += 1;
                    match score.predicted {
                        Some(p) => {
                            *s.called.entry(p).or_default() += 1;
                            if r.known_label.is_some_and(|k| k != p) {
                                s.called_wrong += 1;
                            }
                        }
                        None => s.abstained += 1,
                    }
                }
                _ => s.failed += 1,
            }
        }
        s
    }
}

/// Run the three detectors over every well of `manifest`. A well whose
/// images cannot be read or processed is reported as failed and the rest
/// still run; missing models fail the whole run.
pub fn run_pipeline(manifest: &PlateManifest, models: &ModelSet, cache: &ScoreCache) -> Result<Vec<WellResult>> {
    let phenotype = models.phenotype()?;
    let wells: Vec<&WellRecord> = manifest.wells.iter().collect();
    let analyses = analyze_all(manifest, &wells, models, cache)?;
    let pm = &phenotype.model;
    Ok(wells
        .iter()
        .zip(analyses)
        .map(|(r, a)| match a {
            Ok(a) => WellResult {
                plate_id: r.plate_id.clone(),
                well_id: r.well_id.clone(),
                known_label: r.known_label,
                status: WellStatus::Ok,
                error: None,
                regions: a.segmented.seg.regions.len(),
                blobs: a.blobs.len(),
                stripes: a.stripes.len(),
                mean_worm_intensity: a.processed.mean_worm_intensity,
                stripe_ratio: a.processed.stripe_ratio,
                score: Some(classify_well(&pm.bag, &a.processed, pm.task, pm.config.area_weighted)),
            },
            Err(e) => {
                log::warn!("well {} failed: {e}", r.well_id);
                WellResult::failed(r, &e)
            }
        })
        .collect())
}

/// The task implied by the labels in a manifest: the one mutant class that
/// appears alongside wild type.
pub fn infer_task(wells: &[&WellRecord]) -> Result<Task> {
    let has = |p: Phenotype| wells.iter().any(|w| w.known_label == Some(p));
    match (has(Phenotype::Lnr), has(Phenotype::Hnr)) {
        (true, false) => Ok(Task::WtVsLnr),
        (false, true) => Ok(Task::WtVsHnr),
        (true, true) => Err(PipelineError::Invalid("both lNR and hNR wells present; name the task".into())),
        (false, false) => Err(PipelineError::Invalid("no labeled mutant wells".into())),
    }
}
