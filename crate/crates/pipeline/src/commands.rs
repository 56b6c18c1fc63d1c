//! The work behind each CLI subcommand and service training trigger.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use wormscreen::boosting::{AdaBoostConfig, Label};
use wormscreen::fluor::{export_stripes, label_blobs_from_mask, train_stripe_model, StripeLabel, StripeLabelFile, StripeModel};
use wormscreen::imagecore::io::{read_mask, write_label_pgm, write_mask_pgm, write_score_map};
use wormscreen::imagecore::{BBox, Mask};
use wormscreen::phenotype::{
    cross_validate, format_table, intensity_histogram_diagnostic, train_plate_classifier, BaggedClassifier,
    PlateManifest, PlateReport, ProcessedWell, Task, WellRecord,
};
use wormscreen::segmenter::{
    hard_negative_mine, train_segmenter, worm_union_mask, ImageAnnotations, MinedNegative, MismatchCounts,
    SegmentationMetrics, SegmenterModel, TrainingImage,
};
use wormscreen::synthplate::{plate_wells, synth_plate};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::models::{Loaded, ModelKind, ModelSet, ModelStore, PhenotypeModel};
use crate::process::{
    analyze_all, blobs_for, infer_task, load_image, run_pipeline, segment, RunSummary, ScoreCache, WellAnalysis,
    WellResult,
};
use crate::record::{now_ms, RunRecord};
use crate::workspace::{write_json, Workspace};

pub struct Context {
    pub cfg: PipelineConfig,
    pub config_hash: String,
    pub ws: Workspace,
    pub store: ModelStore,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        let ws = Workspace::new(&cfg);
        Context {
            config_hash: cfg.hash(),
            store: ModelStore::new(ws.models_dir()),
            ws,
            cfg,
        }
    }

    pub fn cache(&self) -> ScoreCache {
        ScoreCache::at(self.ws.score_cache())
    }

    pub fn models(&self) -> Result<ModelSet> {
        ModelSet::load_current(&self.store)
    }

    pub fn manifest(&self, path: Option<&Path>) -> Result<PlateManifest> {
        self.ws.load_manifest(path)
    }
}

/// Provenance stamped on every JSON artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub model_ids: BTreeMap<ModelKind, String>,
    pub data: T,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub inputs: BTreeMap<String, String>,
    pub model_ids: BTreeMap<ModelKind, String>,
    pub summary: serde_json::Value,
}

impl Outcome {
    fn add_inputs(&mut self, a: &WellAnalysis) {
        for (p, h) in &a.input_hashes {
            self.inputs.insert(p.display().to_string(), h.clone());
        }
    }
}

impl Context {
    fn artifact<T>(&self, model_ids: &BTreeMap<ModelKind, String>, data: T) -> Artifact<T> {
        Artifact {
            config_hash: self.config_hash.clone(),
            model_ids: model_ids.clone(),
            data,
        }
    }

    /// Run `f` and append its record to the run log, whatever the result.
    pub fn recorded(&self, command: &str, f: impl FnOnce(&Context) -> Result<Outcome>) -> Result<Outcome> {
        let started = now_ms();
        let result = f(self);
        let (status, outcome) = match &result {
            Ok(o) => ("ok".to_string(), Some(o)),
            Err(e) => (format!("error: {e}"), None),
        };
        let rec = RunRecord {
            command: command.into(),
            config_hash: self.config_hash.clone(),
            input_hashes: outcome.map(|o| o.inputs.clone()).unwrap_or_default(),
            model_ids: outcome.map(|o| o.model_ids.clone()).unwrap_or_default(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            outputs: outcome
                .map(|o| o.outputs.iter().map(|p| p.display().to_string()).collect())
                .unwrap_or_default(),
            status,
        };
        rec.append(&self.ws.runs_log())?;
        result
    }
}

pub fn select_wells<'a>(manifest: &'a PlateManifest, names: &[String]) -> Result<Vec<&'a WellRecord>> {
    if names.is_empty() {
        return Ok(manifest.wells.iter().collect());
    }
    names
        .iter()
        .map(|n| {
            manifest
                .wells
                .iter()
                .find(|w| &w.well_id == n)
                .ok_or_else(|| PipelineError::NotFound(format!("well {n}")))
        })
        .collect()
}

fn first_error(analyses: Vec<Result<WellAnalysis>>) -> Result<Vec<WellAnalysis>> {
    analyses.into_iter().collect()
}

// ------------------------------------------------------------------ synth

pub fn synth(ctx: &Context, out: Option<&Path>) -> Result<Outcome> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.ws.plate.clone());
    let wells = plate_wells(&ctx.cfg.synth);
    let manifest = synth_plate(&ctx.cfg.synth.plate_id, &wells, &dir)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in &manifest.wells {
        *counts.entry(w.known_label.map(|p| p.to_string()).unwrap_or_default()).or_default() += 1;
    }
    Ok(Outcome {
        outputs: vec![dir.join("manifest.csv")],
        summary: json!({ "plate_id": ctx.cfg.synth.plate_id, "wells": manifest.wells.len(), "classes": counts, "dir": dir }),
        ..Outcome::default()
    })
}

// ------------------------------------------------------------------ segmenter

pub fn load_annotations(ctx: &Context, well: &str) -> Result<Option<ImageAnnotations>> {
    match ctx.ws.annotations().get(well)? {
        None => Ok(None),
        Some((bytes, _)) => {
            let a: ImageAnnotations =
                serde_json::from_slice(&bytes).map_err(PipelineError::json(format!("annotations for {well}")))?;
            a.validate()?;
            Ok(Some(a))
        }
    }
}

fn segmenter_wells<'a>(ctx: &Context, manifest: &'a PlateManifest, names: &[String]) -> Result<Vec<&'a WellRecord>> {
    let names = if names.is_empty() { &ctx.cfg.training.segmenter_wells[..] } else { names };
    if !names.is_empty() {
        return select_wells(manifest, names);
    }
    let mut out = Vec::new();
    for w in &manifest.wells {
        if out.len() >= ctx.cfg.training.segmenter_max_images {
            break;
        }
        if load_annotations(ctx, &w.well_id)?.is_some_and(|a| !a.worms.is_empty()) {
            out.push(w);
        }
    }
    Ok(out)
}

pub struct Trained<T> {
    pub id: String,
    pub model: T,
    pub outcome: Outcome,
}

pub fn train_segmenter_cmd(ctx: &Context, wells: &[String]) -> Result<Trained<SegmenterModel>> {
    let manifest = ctx.manifest(None)?;
    let chosen = segmenter_wells(ctx, &manifest, wells)?;
    if chosen.is_empty() {
        return Err(PipelineError::Invalid("no annotated wells to train the segmenter on".into()));
    }
    let mut outcome = Outcome::default();
    let mut images = Vec::with_capacity(chosen.len());
    for w in &chosen {
        let bf = load_image(&manifest.resolve(&w.bf_path))?;
        let ann = load_annotations(ctx, &w.well_id)?
            .ok_or_else(|| PipelineError::NotFound(format!("annotations for {}", w.well_id)))?;
        outcome.inputs.insert(bf.path.display().to_string(), bf.sha256.clone());
        images.push(TrainingImage {
            id: w.well_id.clone(),
            stack: wormscreen::segmenter::FeatureStack::new(&bf.image, &ctx.cfg.segmenter.features)?,
            worms: ann.worms,
        });
    }
    let rounds = train_segmenter(&images, &ctx.cfg.segmenter)?;
    let last = rounds.last().expect("training returns round 0").model.clone();
    let id = ctx.store.save(ModelKind::Segmenter, &last, &ctx.cfg)?;
    ctx.store.set_current(ModelKind::Segmenter, &id)?;
    outcome.model_ids.insert(ModelKind::Segmenter, id.clone());
    outcome.outputs.push(ctx.store.dir.join("segmenter").join(format!("{id}.json")));
    outcome.summary = json!({
        "model_id": id,
        "wells": chosen.iter().map(|w| &w.well_id).collect::<Vec<_>>(),
        "threshold": last.threshold,
        "rounds": rounds.iter().map(|r| json!({
            "round": r.round,
            "positives": r.positives,
            "negatives": r.negatives,
            "mined_added": r.mined_added,
            "train_mismatch_pct": r.train_mismatch_pct,
        })).collect::<Vec<_>>(),
    });
    Ok(Trained { id, model: last, outcome })
}

/// Highest-scoring segments away from the annotated worms of `well`.
pub fn hard_negatives(
    ctx: &Context,
    manifest: &PlateManifest,
    segmenter: &Loaded<SegmenterModel>,
    well: &WellRecord,
    top_m: usize,
) -> Result<Vec<MinedNegative>> {
    let bf = load_image(&manifest.resolve(&well.bf_path))?;
    let scores = ctx.cache().scores(segmenter, &bf)?;
    let (w, h) = bf.image.dims();
    let excluded = match load_annotations(ctx, &well.well_id)? {
        Some(a) => worm_union_mask(&a.worms, w, h, segmenter.model.config.negative_exclusion_px),
        None => Mask::new(w, h),
    };
    Ok(hard_negative_mine(&scores, &excluded, top_m, segmenter.model.config.nms_radius))
}

pub fn mine_negatives(ctx: &Context, wells: &[String], top_m: Option<usize>) -> Result<Outcome> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let seg = models.segmenter()?;
    let chosen = segmenter_wells(ctx, &manifest, wells)?;
    let top_m = top_m.unwrap_or(seg.model.config.mining_top_m);
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    let mut counts = BTreeMap::new();
    for w in chosen {
        let negs = hard_negatives(ctx, &manifest, seg, w, top_m)?;
        let path = ctx.ws.outputs("negatives").join(&w.plate_id).join(format!("{}.json", w.well_id));
        write_json(&path, &ctx.artifact(&outcome.model_ids, &negs))?;
        counts.insert(w.well_id.clone(), negs.len());
        outcome.outputs.push(path);
    }
    outcome.summary = json!({ "top_m": top_m, "candidates": counts });
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub area: usize,
    pub bbox: BBox,
    pub centroid: (f64, f64),
}

pub fn segment_cmd(ctx: &Context, wells: &[String]) -> Result<Outcome> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let seg = models.segmenter()?;
    let cache = ctx.cache();
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    let mut regions = BTreeMap::new();
    for w in select_wells(&manifest, wells)? {
        let bf = load_image(&manifest.resolve(&w.bf_path))?;
        outcome.inputs.insert(bf.path.display().to_string(), bf.sha256.clone());
        let s = segment(seg, &bf, &cache)?;
        let dir = ctx.ws.outputs("segment").join(&w.plate_id);
        let mask = dir.join(format!("{}_mask.pgm", w.well_id));
        let score_pgm = dir.join(format!("{}_scores.pgm", w.well_id));
        let score_json = dir.join(format!("{}_scores.json", w.well_id));
        let region_json = dir.join(format!("{}_regions.json", w.well_id));
        write_mask_pgm(&mask, &s.seg.mask)?;
        write_score_map(&score_pgm, &score_json, s.scores.width, s.scores.height, &s.scores.best_score)?;
        let summary: Vec<RegionSummary> = s
            .seg
            .regions
            .iter()
            .map(|r| RegionSummary {
                area: r.area,
                bbox: r.bbox,
                centroid: r.centroid,
            })
            .collect();
        regions.insert(w.well_id.clone(), summary.len());
        write_json(&region_json, &ctx.artifact(&outcome.model_ids, json!({ "threshold": s.seg.threshold, "regions": summary })))?;
        outcome.outputs.extend([mask, score_pgm, score_json, region_json]);
    }
    outcome.summary = json!({ "regions": regions });
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSegMetrics {
    pub well_id: String,
    pub truth_source: String,
    pub metrics: SegmentationMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEvaluation {
    pub pooled: SegmentationMetrics,
    pub wells: Vec<WellSegMetrics>,
    pub skipped: Vec<String>,
}

pub fn eval_seg(ctx: &Context, wells: &[String]) -> Result<Outcome> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let seg = models.segmenter()?;
    let cache = ctx.cache();
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    let mut pooled = MismatchCounts::default();
    let mut per_well = Vec::new();
    let mut skipped = Vec::new();
    for w in select_wells(&manifest, wells)? {
        let bf = load_image(&manifest.resolve(&w.bf_path))?;
        let truth_path = ctx.ws.truth_worm_mask(&w.well_id);
        let (truth, source) = if truth_path.exists() {
            (read_mask(&truth_path)?, "truth mask")
        } else if let Some(a) = load_annotations(ctx, &w.well_id)? {
            let (wd, ht) = bf.image.dims();
            (worm_union_mask(&a.worms, wd, ht, 0), "annotations")
        } else {
            skipped.push(w.well_id.clone());
            continue;
        };
        outcome.inputs.insert(bf.path.display().to_string(), bf.sha256.clone());
        let s = segment(seg, &bf, &cache)?;
        let counts = MismatchCounts::of(&s.seg.mask, &truth)?;
        pooled.add(&counts);
        per_well.push(WellSegMetrics {
            well_id: w.well_id.clone(),
            truth_source: source.into(),
            metrics: counts.metrics()?,
        });
    }
    if per_well.is_empty() {
        return Err(PipelineError::Invalid("no wells with ground truth or annotations".into()));
    }
    let eval = SegEvaluation {
        pooled: pooled.metrics()?,
        wells: per_well,
        skipped,
    };
    let path = ctx.ws.reports().join("eval-seg.json");
    write_json(&path, &ctx.artifact(&outcome.model_ids, &eval))?;
    outcome.summary = json!({ "pooled": eval.pooled, "wells": eval.wells.len(), "skipped": eval.skipped });
    outcome.outputs.push(path);
    Ok(outcome)
}

// ------------------------------------------------------------------ stripes

fn stripe_label(l: Label) -> StripeLabel {
    match l {
        Label::Positive => StripeLabel::Stripe,
        Label::Negative => StripeLabel::Other,
    }
}

pub fn train_stripe_cmd(ctx: &Context, wells: &[String], from_truth: bool) -> Result<Trained<StripeModel>> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let seg = models.segmenter()?;
    let cache = ctx.cache();
    let labels = ctx.ws.stripe_labels();
    let names = if wells.is_empty() { &ctx.cfg.training.stripe_wells[..] } else { wells };
    let chosen: Vec<&WellRecord> = if !names.is_empty() {
        select_wells(&manifest, names)?
    } else if from_truth {
        manifest
            .wells
            .iter()
            .filter(|w| ctx.ws.truth_stripe_mask(&w.well_id).exists())
            .take(ctx.cfg.training.stripe_max_images)
            .collect()
    } else {
        let have = labels.ids()?;
        manifest.wells.iter().filter(|w| have.contains(&w.well_id)).collect()
    };
    if chosen.is_empty() {
        return Err(PipelineError::Invalid("no labeled wells to train the stripe model on".into()));
    }
    let mut outcome = Outcome {
        model_ids: BTreeMap::from([(ModelKind::Segmenter, seg.id.clone())]),
        ..Outcome::default()
    };
    let mut labeled = Vec::new();
    for w in &chosen {
        let bf = load_image(&manifest.resolve(&w.bf_path))?;
        let fl = load_image(&manifest.resolve(&w.fl_path))?;
        outcome.inputs.insert(bf.path.display().to_string(), bf.sha256.clone());
        outcome.inputs.insert(fl.path.display().to_string(), fl.sha256.clone());
        let s = segment(seg, &bf, &cache)?;
        let blobs = blobs_for(&fl.image, &ctx.cfg.stripes.blob, Some(&s))?;
        if from_truth {
            let truth = read_mask(&ctx.ws.truth_stripe_mask(&w.well_id))?;
            let l = label_blobs_from_mask(&blobs, &truth, ctx.cfg.stripes.label_overlap);
            let file = StripeLabelFile::new(&w.well_id, &blobs, &l.iter().map(|&x| stripe_label(x)).collect::<Vec<_>>());
            let bytes = serde_json::to_vec_pretty(&file).map_err(PipelineError::json("stripe labels"))?;
            let version = labels.version(&w.well_id)?;
            labels.put(&w.well_id, &bytes, version)?;
            outcome.outputs.push(labels.path(&w.well_id));
            labeled.extend(blobs.into_iter().zip(l));
        } else {
            let (bytes, _) = labels
                .get(&w.well_id)?
                .ok_or_else(|| PipelineError::NotFound(format!("stripe labels for {}", w.well_id)))?;
            let file: StripeLabelFile =
                serde_json::from_slice(&bytes).map_err(PipelineError::json(format!("stripe labels for {}", w.well_id)))?;
            labeled.extend(file.pair(&blobs)?.into_iter().map(|(b, l)| (b.clone(), l)));
        }
    }
    let boost = AdaBoostConfig {
        seed: ctx.cfg.stripes.seed,
        ..AdaBoostConfig::with_rounds(ctx.cfg.stripes.rounds)
    };
    let model = train_stripe_model(&labeled, &ctx.cfg.stripes.blob, &boost)?;
    let id = ctx.store.save(ModelKind::Stripe, &model, &ctx.cfg)?;
    ctx.store.set_current(ModelKind::Stripe, &id)?;
    outcome.model_ids.insert(ModelKind::Stripe, id.clone());
    outcome.outputs.push(ctx.store.dir.join("stripe").join(format!("{id}.json")));
    let positives = labeled.iter().filter(|(_, l)| *l == Label::Positive).count();
    outcome.summary = json!({
        "model_id": id,
        "wells": chosen.iter().map(|w| &w.well_id).collect::<Vec<_>>(),
        "blobs": labeled.len(),
        "stripes": positives,
    });
    Ok(Trained { id, model, outcome })
}

pub fn detect_stripes(ctx: &Context, wells: &[String]) -> Result<Outcome> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let stripe = models.stripe()?;
    let chosen = select_wells(&manifest, wells)?;
    let analyses = first_error(analyze_all(&manifest, &chosen, &models, &ctx.cache())?)?;
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    let mut counts = BTreeMap::new();
    for a in &analyses {
        outcome.add_inputs(a);
        let (w, h) = a.segmented.seg.mask.dims();
        let (label_map, records) = export_stripes(&stripe.model, &a.stripes, w, h);
        let dir = ctx.ws.outputs("stripes").join(&a.record.plate_id);
        let pgm = dir.join(format!("{}_stripes.pgm", a.record.well_id));
        let table = dir.join(format!("{}_stripes.json", a.record.well_id));
        write_label_pgm(&pgm, w, h, &label_map)?;
        write_json(&table, &ctx.artifact(&outcome.model_ids, &records))?;
        counts.insert(a.record.well_id.clone(), json!({ "blobs": a.blobs.len(), "stripes": a.stripes.len() }));
        outcome.outputs.extend([pgm, table]);
    }
    outcome.summary = json!({ "wells": counts });
    Ok(outcome)
}

// ------------------------------------------------------------------ phenotype

fn labeled_analyses(ctx: &Context, manifest: &PlateManifest, wells: &[String], models: &ModelSet) -> Result<Vec<WellAnalysis>> {
    let chosen: Vec<&WellRecord> = select_wells(manifest, wells)?.into_iter().filter(|w| w.known_label.is_some()).collect();
    first_error(analyze_all(manifest, &chosen, models, &ctx.cache())?)
}

pub fn train_phenotype_cmd(ctx: &Context, task: Option<Task>, wells: &[String]) -> Result<Trained<PhenotypeModel>> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let analyses = labeled_analyses(ctx, &manifest, wells, &models)?;
    let records: Vec<&WellRecord> = analyses.iter().map(|a| &a.record).collect();
    let task = match task {
        Some(t) => t,
        None => infer_task(&records)?,
    };
    let processed: Vec<&ProcessedWell> = analyses.iter().map(|a| &a.processed).collect();
    let bag = train_plate_classifier(processed.iter().copied(), task, &ctx.cfg.phenotype, ctx.cfg.phenotype.seed)?;
    let model = PhenotypeModel {
        task,
        config: ctx.cfg.phenotype.clone(),
        bag,
        trained_on: records
            .iter()
            .filter(|r| r.known_label.and_then(|p| task.label_of(p)).is_some())
            .map(|r| r.well_id.clone())
            .collect(),
    };
    let id = ctx.store.save(ModelKind::Phenotype, &model, &ctx.cfg)?;
    ctx.store.set_current(ModelKind::Phenotype, &id)?;
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    for a in &analyses {
        outcome.add_inputs(a);
    }
    outcome.model_ids.insert(ModelKind::Phenotype, id.clone());
    outcome.outputs.push(ctx.store.dir.join("phenotype").join(format!("{id}.json")));
    outcome.summary = json!({ "model_id": id, "task": task, "wells": model.trained_on.len() });
    Ok(Trained { id, model, outcome })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateClassification {
    pub task: Task,
    pub summary: RunSummary,
    pub wells: Vec<WellResult>,
}

pub fn classify_plate(ctx: &Context, manifest_path: Option<&Path>) -> Result<(Outcome, Artifact<PlateClassification>)> {
    let manifest = ctx.manifest(manifest_path)?;
    let models = ctx.models()?;
    classify_with(ctx, &manifest, &models)
}

pub fn classify_with(
    ctx: &Context,
    manifest: &PlateManifest,
    models: &ModelSet,
) -> Result<(Outcome, Artifact<PlateClassification>)> {
    let results = run_pipeline(manifest, models, &ctx.cache())?;
    let report = ctx.artifact(
        &models.ids(),
        PlateClassification {
            task: models.phenotype()?.model.task,
            summary: RunSummary::of(&results),
            wells: results,
        },
    );
    let plates: std::collections::BTreeSet<&str> = manifest.wells.iter().map(|w| w.plate_id.as_str()).collect();
    let name = if plates.len() == 1 { plates.into_iter().next().unwrap_or("plate").to_string() } else { "plates".into() };
    let path = ctx.ws.reports().join(format!("{name}-classify.json"));
    write_json(&path, &report)?;
    let mut outcome = Outcome {
        model_ids: models.ids(),
        outputs: vec![path],
        summary: serde_json::to_value(&report.data.summary).map_err(PipelineError::json("summary"))?,
        ..Outcome::default()
    };
    for w in &manifest.wells {
        for p in [&w.bf_path, &w.fl_path] {
            let full = manifest.resolve(p);
            if let Ok(h) = crate::record::hash_file(&full) {
                outcome.inputs.insert(full.display().to_string(), h);
            }
        }
    }
    Ok((outcome, report))
}

pub fn cv_report(ctx: &Context, task: Option<Task>) -> Result<(Outcome, String)> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let analyses = labeled_analyses(ctx, &manifest, &[], &models)?;
    let mut by_plate: BTreeMap<String, Vec<&WellAnalysis>> = BTreeMap::new();
    for a in &analyses {
        by_plate.entry(a.record.plate_id.clone()).or_default().push(a);
    }
    let classifier = BaggedClassifier {
        cfg: ctx.cfg.phenotype.clone(),
    };
    let mut reports: Vec<PlateReport> = Vec::new();
    for (plate, wells) in &by_plate {
        let records: Vec<&WellRecord> = wells.iter().map(|a| &a.record).collect();
        let t = match task {
            Some(t) => t,
            None => infer_task(&records)?,
        };
        let processed: Vec<ProcessedWell> = wells.iter().map(|a| a.processed.clone()).collect();
        reports.push(cross_validate(plate, &processed, t, &classifier, &ctx.cfg.cv)?);
    }
    let table = format_table(&reports);
    let json_path = ctx.ws.reports().join("cv.json");
    let tsv_path = ctx.ws.reports().join("cv.tsv");
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    for a in &analyses {
        outcome.add_inputs(a);
    }
    write_json(&json_path, &ctx.artifact(&outcome.model_ids, &reports))?;
    crate::workspace::atomic_write(&tsv_path, table.as_bytes())?;
    outcome.summary = json!(reports
        .iter()
        .map(|r| json!({ "plate_id": r.plate_id, "task": r.task, "rates": r.rates, "no_worm_pct": r.no_worm_pct }))
        .collect::<Vec<_>>());
    outcome.outputs = vec![json_path, tsv_path];
    Ok((outcome, table))
}

pub fn fig2_diagnostic(ctx: &Context) -> Result<Outcome> {
    let manifest = ctx.manifest(None)?;
    let models = ctx.models()?;
    let analyses = labeled_analyses(ctx, &manifest, &[], &models)?;
    let processed: Vec<ProcessedWell> = analyses.iter().map(|a| a.processed.clone()).collect();
    let diag = intensity_histogram_diagnostic(&processed, ctx.cfg.report.histogram_bins);
    let path = ctx.ws.reports().join("fig2-diagnostic.json");
    let mut outcome = Outcome {
        model_ids: models.ids(),
        ..Outcome::default()
    };
    for a in &analyses {
        outcome.add_inputs(a);
    }
    write_json(&path, &ctx.artifact(&outcome.model_ids, &diag))?;
    outcome.summary = json!({ "separation": diag.separation });
    outcome.outputs.push(path);
    Ok(outcome)
}
