//! Synthetic agar wells with known ground truth: brightfield worms, look-alike
//! tracks, border vignetting, and fluorescence stripes whose appearance
//! depends on the phenotype.

mod config;
mod plate;
mod render;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{FluorParams, StripeParams, StripeTable, SynthConfig};
pub use plate::{plate_wells, synth_plate, well_name, PlateConfig, PlateLayout, TruthSummary, WellSpec};
pub use render::{synth_scene, SynthScene};

use crate::imagecore::ImageError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("placed {placed} of {requested} worms; gave up after {attempts} attempts for the next one")]
    Packing {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("well {well_id}: {source}")]
    Well {
        well_id: String,
        #[source]
        source: Box<SynthError>,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Manifest(String),
}
