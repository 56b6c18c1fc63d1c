use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use wormscreen::phenotype::Task;
use wormscreen_pipeline::commands::{self, Context, Outcome};
use wormscreen_pipeline::config::PipelineConfig;
use wormscreen_pipeline::error::Result;
use wormscreen_pipeline::server::{self, AppState};

#[derive(Parser)]
#[command(name = "wormscreen", version, about = "Worm segmentation, stripe detection and plate phenotyping")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set segmenter.boost.rounds=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Workspace directory (models, caches, outputs, run log).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Plate directory, relative to the workspace unless absolute.
    #[arg(long, global = true)]
    plate: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WellArgs {
    /// Restrict to these wells (repeatable).
    #[arg(long = "well")]
    wells: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Render a synthetic plate with ground truth.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the worm segmenter from annotated wells.
    TrainSegmenter(WellArgs),
    /// Write the current segmenter's hard negatives per well.
    MineNegatives {
        #[command(flatten)]
        wells: WellArgs,
        #[arg(long)]
        top_m: Option<usize>,
    },
    /// Write worm masks, score maps and regions.
    Segment(WellArgs),
    /// Compare segmentation against ground truth or annotations.
    EvalSeg(WellArgs),
    /// Train the stripe classifier from labeled blobs.
    TrainStripe {
        #[command(flatten)]
        wells: WellArgs,
        /// Label blobs from the plate's truth stripe masks and save the labels.
        #[arg(long)]
        from_truth: bool,
    },
    /// Write stripe label maps and feature tables.
    DetectStripes(WellArgs),
    /// Train the per-plate phenotype committee.
    TrainPhenotype {
        #[command(flatten)]
        wells: WellArgs,
        #[arg(long)]
        task: Option<Task>,
    },
    /// Classify every well of a plate.
    ClassifyPlate {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Cross-validated error report per plate.
    CvReport {
        #[arg(long)]
        task: Option<Task>,
    },
    /// Per-class intensity and stripe-ratio histograms.
    Fig2Diagnostic,
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(w) = &cli.workspace {
        cfg.paths.workspace = w.clone();
    }
    if let Some(p) = &cli.plate {
        cfg.paths.plate = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print(outcome: &Outcome) {
    println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
    for p in &outcome.outputs {
        log::info!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let ctx = Context::new(cfg);
    let outcome = match cli.command {
        Command::Config => {
            print!("{}", ctx.cfg.to_toml()?);
            return Ok(());
        }
        Command::Serve { addr } => {
            let addr = addr.unwrap_or_else(|| ctx.cfg.server.addr.clone());
            let state = Arc::new(AppState::new(ctx)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| wormscreen_pipeline::error::PipelineError::Config(e.to_string()))?;
            return rt.block_on(server::serve(state, &addr));
        }
        Command::Synth { out } => ctx.recorded("synth", |c| commands::synth(c, out.as_deref()))?,
        Command::TrainSegmenter(w) => ctx.recorded("train-segmenter", |c| Ok(commands::train_segmenter_cmd(c, &w.wells)?.outcome))?,
        Command::MineNegatives { wells, top_m } => {
            ctx.recorded("mine-negatives", |c| commands::mine_negatives(c, &wells.wells, top_m))?
        }
        Command::Segment(w) => ctx.recorded("segment", |c| commands::segment_cmd(c, &w.wells))?,
        Command::EvalSeg(w) => ctx.recorded("eval-seg", |c| commands::eval_seg(c, &w.wells))?,
        Command::TrainStripe { wells, from_truth } => ctx.recorded("train-stripe", |c| {
            Ok(commands::train_stripe_cmd(c, &wells.wells, from_truth)?.outcome)
        })?,
        Command::DetectStripes(w) => ctx.recorded("detect-stripes", |c| commands::detect_stripes(c, &w.wells))?,
        Command::TrainPhenotype { wells, task } => ctx.recorded("train-phenotype", |c| {
            Ok(commands::train_phenotype_cmd(c, task, &wells.wells)?.outcome)
        })?,
        Command::ClassifyPlate { manifest } => {
            ctx.recorded("classify-plate", |c| Ok(commands::classify_plate(c, manifest.as_deref())?.0))?
        }
        Command::CvReport { task } => {
            let mut table = String::new();
            let o = ctx.recorded("cv-report", |c| {
                let (o, t) = commands::cv_report(c, task)?;
                table = t;
                Ok(o)
            })?;
            print!("{table}");
            o
        }
        Command::Fig2Diagnostic => ctx.recorded("fig2-diagnostic", commands::fig2_diagnostic)?,
    };
    print(&outcome);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
