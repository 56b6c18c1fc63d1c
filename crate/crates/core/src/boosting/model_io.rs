//! Versioned JSON model files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BaggedEnsemble, BoostError, StumpEnsemble};

pub const ENSEMBLE_FORMAT: &str = "wormscreen.stump-ensemble/v1";
pub const BAG_FORMAT: &str = "wormscreen.bagged-ensemble/v1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    #[serde(flatten)]
    model: T,
}

fn to_json<T: Serialize>(format: &str, model: &T) -> Result<String, BoostError> {
    serde_json::to_string_pretty(&Envelope {
        format: format.to_string(),
        model,
    })
    .map_err(|e| BoostError::Format(e.to_string()))
}

fn from_json<T: DeserializeOwned>(format: &str, text: &str) -> Result<T, BoostError> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| BoostError::Format(e.to_string()))?;
    if env.format != format {
        return Err(BoostError::Format(format!("expected format {format:?}, found {:?}", env.format)));
    }
    Ok(env.model)
}

pub fn ensemble_to_json(m: &StumpEnsemble) -> Result<String, BoostError> {
    m.validate()?;
    to_json(ENSEMBLE_FORMAT, m)
}

pub fn ensemble_from_json(text: &str) -> Result<StumpEnsemble, BoostError> {
    let m: StumpEnsemble = from_json(ENSEMBLE_FORMAT, text)?;
    m.validate()?;
    Ok(m)
}

pub fn bag_to_json(b: &BaggedEnsemble) -> Result<String, BoostError> {
    b.validate()?;
    to_json(BAG_FORMAT, b)
}

pub fn bag_from_json(text: &str) -> Result<BaggedEnsemble, BoostError> {
    let b: BaggedEnsemble = from_json(BAG_FORMAT, text)?;
    b.validate()?;
    Ok(b)
}

fn io_err(path: &Path, source: std::io::Error) -> BoostError {
    BoostError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_ensemble(path: &Path, m: &StumpEnsemble) -> Result<(), BoostError> {
    std::fs::write(path, ensemble_to_json(m)?).map_err(|e| io_err(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<StumpEnsemble, BoostError> {
    ensemble_from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn save_bag(path: &Path, b: &BaggedEnsemble) -> Result<(), BoostError> {
    std::fs::write(path, bag_to_json(b)?).map_err(|e| io_err(path, e))
}

pub fn load_bag(path: &Path) -> Result<BaggedEnsemble, BoostError> {
    bag_from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}
