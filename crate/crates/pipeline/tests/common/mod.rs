#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use wormscreen::phenotype::Phenotype;
use wormscreen::synthplate::{PlateConfig, SynthConfig};
use wormscreen_pipeline::commands::{self, Context};
use wormscreen_pipeline::config::PipelineConfig;

/// A small synthetic plate with all three models trained, built once per
/// test binary. Tests that write must work on a [`copy`].
pub struct Fixture {
    pub root: PathBuf,
}

pub fn small_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.workspace = root.to_path_buf();
    cfg.synth = PlateConfig {
        plate_id: "T1".into(),
        wells: 12,
        mutant: Phenotype::Lnr,
        base: SynthConfig {
            width: 200,
            height: 160,
            worm_count: 3,
            worm_length: (60.0, 100.0),
            ..SynthConfig::default()
        },
        seed: 7,
        ..PlateConfig::default()
    };
    cfg.segmenter.boost.rounds = 30;
    cfg.segmenter.mining_rounds = 1;
    cfg.segmenter.negatives_per_image = 200;
    cfg.segmenter.mining_top_m = 50;
    cfg.stripes.rounds = 30;
    cfg.training.segmenter_max_images = 3;
    cfg.training.stripe_max_images = 4;
    cfg.phenotype.rounds = 20;
    cfg
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("service-fixture-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&root);
        let ctx = Context::new(small_config(&root));
        ctx.recorded("synth", |c| commands::synth(c, None)).unwrap();
        ctx.recorded("train-segmenter", |c| Ok(commands::train_segmenter_cmd(c, &[])?.outcome)).unwrap();
        ctx.recorded("train-stripe", |c| Ok(commands::train_stripe_cmd(c, &[], true)?.outcome)).unwrap();
        ctx.recorded("train-phenotype", |c| Ok(commands::train_phenotype_cmd(c, None, &[])?.outcome)).unwrap();
        Fixture { root }
    })
}

impl Fixture {
    pub fn context(&self) -> Context {
        Context::new(small_config(&self.root))
    }

    /// A private copy of the trained workspace.
    pub fn copy(&self) -> (tempfile::TempDir, Context) {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&self.root, dir.path());
        let ctx = Context::new(small_config(dir.path()));
        (dir, ctx)
    }
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}
