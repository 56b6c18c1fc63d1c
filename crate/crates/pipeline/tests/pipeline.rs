mod common;

use std::collections::BTreeSet;

use wormscreen::fluor::{classify_stripes, detect_blobs};
use wormscreen::imagecore::io::decode_image;
use wormscreen::phenotype::{classify_well, process_well, PlateManifest};
use wormscreen_pipeline::commands;
use wormscreen_pipeline::error::PipelineError;
use wormscreen_pipeline::models::ModelKind;
use wormscreen_pipeline::process::{run_pipeline, ScoreCache, WellStatus};
use wormscreen_pipeline::record::read_log;

#[test]
fn empty_manifest_is_an_empty_success() {
    let ctx = common::fixture().context();
    let models = ctx.models().unwrap();
    let empty = PlateManifest {
        wells: Vec::new(),
        base_dir: ctx.ws.plate.clone(),
    };
    assert!(run_pipeline(&empty, &models, &ScoreCache::default()).unwrap().is_empty());
}

#[test]
fn missing_phenotype_model_fails_the_run() {
    let (_dir, ctx) = common::fixture().copy();
    let mut current = ctx.store.current().unwrap();
    current.remove(&ModelKind::Phenotype);
    std::fs::write(ctx.store.dir.join("current.json"), serde_json::to_vec(&current).unwrap()).unwrap();
    let models = ctx.models().unwrap();
    let manifest = ctx.manifest(None).unwrap();
    assert!(matches!(
        run_pipeline(&manifest, &models, &ScoreCache::default()),
        Err(PipelineError::MissingModel(ModelKind::Phenotype))
    ));
}

#[test]
fn unreadable_well_fails_alone() {
    let ctx = common::fixture().context();
    let models = ctx.models().unwrap();
    let manifest = ctx.manifest(None).unwrap();
    let baseline = run_pipeline(&manifest, &models, &ctx.cache()).unwrap();

    let mut broken = manifest.clone();
    broken.wells[2].bf_path = "images/does_not_exist.pgm".into();
    let results = run_pipeline(&broken, &models, &ctx.cache()).unwrap();
    assert_eq!(results.len(), manifest.wells.len());
    for (i, (got, want)) in results.iter().zip(&baseline).enumerate() {
        if i == 2 {
            assert_eq!(got.status, WellStatus::Failed);
            assert!(got.error.as_deref().unwrap().contains("does_not_exist"));
            assert!(got.score.is_none());
        } else {
            assert_eq!(got, want, "well {i}");
        }
    }
}

#[test]
fn pipeline_equals_direct_module_calls() {
    let ctx = common::fixture().context();
    let models = ctx.models().unwrap();
    let mut manifest = ctx.manifest(None).unwrap();
    manifest.wells.truncate(8);
    let results = run_pipeline(&manifest, &models, &ScoreCache::default()).unwrap();

    let seg = &models.segmenter().unwrap().model;
    let stripe = &models.stripe().unwrap().model;
    let pheno = &models.phenotype().unwrap().model;
    for (w, r) in manifest.wells.iter().zip(&results) {
        let bf = decode_image(&std::fs::read(manifest.resolve(&w.bf_path)).unwrap()).unwrap();
        let fl = decode_image(&std::fs::read(manifest.resolve(&w.fl_path)).unwrap()).unwrap();
        let scores = seg.score(&seg.feature_stack(&bf).unwrap()).unwrap();
        let s = seg.segment_scores(&scores);
        let blobs = detect_blobs(&fl, &stripe.blob, Some(&s.mask), Some(&scores));
        let stripes = classify_stripes(stripe, &blobs);
        let well = process_well(&w.well_id, w.known_label, &s.regions, &stripes, &fl);
        let score = classify_well(&pheno.bag, &well, pheno.task, pheno.config.area_weighted);

        assert_eq!(r.status, WellStatus::Ok);
        assert_eq!(r.regions, s.regions.len());
        assert_eq!(r.blobs, blobs.len());
        assert_eq!(r.stripes, stripes.len());
        assert_eq!(r.mean_worm_intensity, well.mean_worm_intensity);
        assert_eq!(r.stripe_ratio, well.stripe_ratio);
        assert_eq!(r.score.as_ref(), Some(&score));
    }
}

#[test]
fn cached_and_fresh_scores_agree() {
    let (_dir, ctx) = common::fixture().copy();
    let models = ctx.models().unwrap();
    let manifest = ctx.manifest(None).unwrap();
    let fresh = run_pipeline(&manifest, &models, &ScoreCache::default()).unwrap();
    let first = run_pipeline(&manifest, &models, &ctx.cache()).unwrap();
    let second = run_pipeline(&manifest, &models, &ctx.cache()).unwrap();
    assert_eq!(fresh, first);
    assert_eq!(first, second);
}

#[test]
fn trained_phenotype_model_calls_most_wells_right() {
    let ctx = common::fixture().context();
    let (_, report) = commands::classify_plate(&ctx, None).unwrap();
    let s = &report.data.summary;
    assert_eq!(s.wells, 12);
    assert_eq!(s.failed, 0);
    assert!(s.called_wrong <= 2, "{s:?}");
    assert_eq!(report.model_ids, ctx.models().unwrap().ids());
}

#[test]
fn run_log_records_inputs_and_models() {
    let ctx = common::fixture().context();
    let log = read_log(&ctx.ws.runs_log()).unwrap();
    let commands: Vec<&str> = log.iter().map(|r| r.command.as_str()).collect();
    for c in ["synth", "train-segmenter", "train-stripe", "train-phenotype"] {
        assert!(commands.contains(&c), "{commands:?}");
    }
    let current = ctx.store.current().unwrap();
    let pheno = log.iter().find(|r| r.command == "train-phenotype").unwrap();
    assert_eq!(pheno.status, "ok");
    assert_eq!(pheno.config_hash, ctx.config_hash);
    assert_eq!(pheno.model_ids, current);
    assert!(!pheno.input_hashes.is_empty());
    let seg = log.iter().find(|r| r.command == "train-segmenter").unwrap();
    assert_eq!(seg.input_hashes.len(), 3);
    assert_eq!(seg.model_ids.keys().copied().collect::<BTreeSet<_>>(), BTreeSet::from([ModelKind::Segmenter]));
}

#[test]
fn failed_commands_are_logged() {
    let (_dir, ctx) = common::fixture().copy();
    let before = read_log(&ctx.ws.runs_log()).unwrap().len();
    let r = ctx.recorded("segment", |c| commands::segment_cmd(c, &["Z99".to_string()]));
    assert!(r.is_err());
    let log = read_log(&ctx.ws.runs_log()).unwrap();
    assert_eq!(log.len(), before + 1);
    assert!(log.last().unwrap().status.starts_with("error"));
}

#[test]
fn batch_outputs_carry_provenance() {
    let (_dir, ctx) = common::fixture().copy();
    let wells = vec!["A01".to_string()];
    let seg = commands::segment_cmd(&ctx, &wells).unwrap();
    assert_eq!(seg.outputs.len(), 4);
    for p in &seg.outputs {
        assert!(p.exists(), "{}", p.display());
    }
    let regions: serde_json::Value =
        serde_json::from_slice(&std::fs::read(seg.outputs.iter().find(|p| p.to_string_lossy().ends_with("_regions.json")).unwrap()).unwrap())
            .unwrap();
    assert_eq!(regions["config_hash"], ctx.config_hash);
    assert_eq!(regions["model_ids"]["segmenter"], ctx.store.current().unwrap()[&ModelKind::Segmenter]);

    let eval = commands::eval_seg(&ctx, &[]).unwrap();
    let pooled = &eval.summary["pooled"];
    assert!(pooled["total_pct"].as_f64().unwrap() < 100.0);

    let stripes = commands::detect_stripes(&ctx, &wells).unwrap();
    assert_eq!(stripes.outputs.len(), 2);
    let (_, table) = commands::cv_report(&ctx, None).unwrap();
    assert!(table.contains("T1"));
    commands::fig2_diagnostic(&ctx).unwrap();
    commands::mine_negatives(&ctx, &[], Some(5)).unwrap();
}
