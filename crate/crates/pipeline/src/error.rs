use std::path::PathBuf;

use thiserror::Error;
use wormscreen::boosting::BoostError;
use wormscreen::fluor::FluorError;
use wormscreen::imagecore::ImageError;
use wormscreen::phenotype::PhenotypeError;
use wormscreen::segmenter::SegmenterError;
use wormscreen::synthplate::SynthError;

use crate::models::ModelKind;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no {0} model; train one first")]
    MissingModel(ModelKind),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("version conflict: expected {expected}, current is {current}")]
    Conflict { expected: u64, current: u64 },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error(transparent)]
    Fluor(#[from] FluorError),
    #[error(transparent)]
    Phenotype(#[from] PhenotypeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }

    pub fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> PipelineError {
        let context = context.into();
        move |source| PipelineError::Json { context, source }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
