//! Content-addressed model files and the in-memory registry of current
//! models.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wormscreen::boosting::BaggedEnsemble;
use wormscreen::fluor::StripeModel;
use wormscreen::phenotype::{PhenotypeConfig, Task};
use wormscreen::segmenter::SegmenterModel;

use crate::config::{sha256_hex, PipelineConfig};
use crate::error::{PipelineError, Result};
use crate::workspace::{atomic_write, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Segmenter,
    Stripe,
    Phenotype,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Segmenter, ModelKind::Stripe, ModelKind::Phenotype];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Segmenter => "segmenter",
            ModelKind::Stripe => "stripe",
            ModelKind::Phenotype => "phenotype",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PipelineError::NotFound(format!("model kind {s:?}")))
    }
}

/// A committee trained for one plate and one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeModel {
    pub task: Task,
    pub config: PhenotypeConfig,
    pub bag: BaggedEnsemble,
    pub trained_on: Vec<String>,
}

pub const MODEL_FILE_FORMAT: &str = "wormscreen-model/v1";

/// On-disk wrapper: the model plus the configuration that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile<T> {
    pub format: String,
    pub kind: ModelKind,
    pub id: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub model: T,
}

#[derive(Debug)]
pub struct Loaded<T> {
    pub id: String,
    pub model: T,
}

/// `models/{kind}/{id}.json` plus `models/current.json` naming the active
/// id of each kind.
#[derive(Clone, Debug)]
pub struct ModelStore {
    pub dir: PathBuf,
}

/// First 16 hex digits of the SHA-256 of the model's JSON.
pub fn model_id<T: Serialize>(model: &T) -> Result<String> {
    let json = serde_json::to_vec(model).map_err(PipelineError::json("model"))?;
    Ok(sha256_hex(&json)[..16].to_string())
}

impl ModelStore {
    pub fn new(dir: PathBuf) -> Self {
        ModelStore { dir }
    }

    fn file(&self, kind: ModelKind, id: &str) -> PathBuf {
        self.dir.join(kind.as_str()).join(format!("{id}.json"))
    }

    fn current_file(&self) -> PathBuf {
        self.dir.join("current.json")
    }

    pub fn save<T: Serialize>(&self, kind: ModelKind, model: &T, cfg: &PipelineConfig) -> Result<String> {
        let id = model_id(model)?;
        let file = ModelFile {
            format: MODEL_FILE_FORMAT.into(),
            kind,
            id: id.clone(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            model,
        };
        write_json(&self.file(kind, &id), &file)?;
        Ok(id)
    }

    pub fn load<T: DeserializeOwned>(&self, kind: ModelKind, id: &str) -> Result<ModelFile<T>> {
        let p = self.file(kind, id);
        let bytes = std::fs::read(&p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::NotFound(format!("{kind} model {id}"))
            } else {
                PipelineError::Io { path: p.clone(), source: e }
            }
        })?;
        let file: ModelFile<T> = serde_json::from_slice(&bytes).map_err(PipelineError::json(p.display().to_string()))?;
        if file.format != MODEL_FILE_FORMAT || file.kind != kind || file.id != id {
            return Err(PipelineError::Invalid(format!("{} is not a {kind} model with id {id}", p.display())));
        }
        Ok(file)
    }

    pub fn current(&self) -> Result<BTreeMap<ModelKind, String>> {
        let p = self.current_file();
        match std::fs::read(&p) {
            Ok(b) => serde_json::from_slice(&b).map_err(PipelineError::json(p.display().to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(PipelineError::Io { path: p, source: e }),
        }
    }

    pub fn set_current(&self, kind: ModelKind, id: &str) -> Result<()> {
        let mut cur = self.current()?;
        cur.insert(kind, id.to_string());
        let bytes = serde_json::to_vec_pretty(&cur).map_err(PipelineError::json("current models"))?;
        atomic_write(&self.current_file(), &bytes)
    }
}

/// The models a pipeline run uses.
#[derive(Debug, Default)]
pub struct ModelSet {
    pub segmenter: Option<Arc<Loaded<SegmenterModel>>>,
    pub stripe: Option<Arc<Loaded<StripeModel>>>,
    pub phenotype: Option<Arc<Loaded<PhenotypeModel>>>,
}

impl ModelSet {
    pub fn load_current(store: &ModelStore) -> Result<Self> {
        let cur = store.current()?;
        let mut set = ModelSet::default();
        if let Some(id) = cur.get(&ModelKind::Segmenter) {
            set.segmenter = Some(Arc::new(Loaded { id: id.clone(), model: store.load(ModelKind::Segmenter, id)?.model }));
        }
        if let Some(id) = cur.get(&ModelKind::Stripe) {
            set.stripe = Some(Arc::new(Loaded { id: id.clone(), model: store.load(ModelKind::Stripe, id)?.model }));
        }
        if let Some(id) = cur.get(&ModelKind::Phenotype) {
            set.phenotype = Some(Arc::new(Loaded { id: id.clone(), model: store.load(ModelKind::Phenotype, id)?.model }));
        }
        Ok(set)
    }

    pub fn ids(&self) -> BTreeMap<ModelKind, String> {
        let mut m = BTreeMap::new();
        if let Some(s) = &self.segmenter {
            m.insert(ModelKind::Segmenter, s.id.clone());
        }
        if let Some(s) = &self.stripe {
            m.insert(ModelKind::Stripe, s.id.clone());
        }
        if let Some(s) = &self.phenotype {
            m.insert(ModelKind::Phenotype, s.id.clone());
        }
        m
    }

    pub fn segmenter(&self) -> Result<&Arc<Loaded<SegmenterModel>>> {
        self.segmenter.as_ref().ok_or(PipelineError::MissingModel(ModelKind::Segmenter))
    }

    pub fn stripe(&self) -> Result<&Arc<Loaded<StripeModel>>> {
        self.stripe.as_ref().ok_or(PipelineError::MissingModel(ModelKind::Stripe))
    }

    pub fn phenotype(&self) -> Result<&Arc<Loaded<PhenotypeModel>>> {
        self.phenotype.as_ref().ok_or(PipelineError::MissingModel(ModelKind::Phenotype))
    }
}

/// Current models shared between request handlers. Readers take a snapshot
/// and never wait on training; installing a model swaps one pointer.
#[derive(Debug, Default)]
pub struct Registry {
    inner: RwLock<Arc<ModelSet>>,
}

impl Registry {
    pub fn new(set: ModelSet) -> Self {
        Registry {
            inner: RwLock::new(Arc::new(set)),
        }
    }

    pub fn snapshot(&self) -> Arc<ModelSet> {
        self.inner.read().expect("registry lock").clone()
    }

    fn swap(&self, f: impl FnOnce(&mut ModelSet)) {
        let mut guard = self.inner.write().expect("registry lock");
        let mut next = ModelSet {
            segmenter: guard.segmenter.clone(),
            stripe: guard.stripe.clone(),
            phenotype: guard.phenotype.clone(),
        };
        f(&mut next);
        *guard = Arc::new(next);
    }

    pub fn install_segmenter(&self, id: String, model: SegmenterModel) {
        self.swap(|s| s.segmenter = Some(Arc::new(Loaded { id, model })));
    }

    pub fn install_stripe(&self, id: String, model: StripeModel) {
        self.swap(|s| s.stripe = Some(Arc::new(Loaded { id, model })));
    }

    pub fn install_phenotype(&self, id: String, model: PhenotypeModel) {
        self.swap(|s| s.phenotype = Some(Arc::new(Loaded { id, model })));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wormscreen::boosting::StumpEnsemble;
    use wormscreen::fluor::BlobConfig;

    fn stripe_model(threshold: f64) -> StripeModel {
        let mut e = StumpEnsemble::empty(wormscreen::fluor::BLOB_FEATURE_NAMES.len());
        e.stumps.push(wormscreen::boosting::Stump {
            feature_index: 0,
            threshold,
            left: -1.0,
            right: 1.0,
        });
        StripeModel::new(e, BlobConfig::default())
    }

    #[test]
    fn ids_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = ModelStore::new(dir.path().to_path_buf());
        let cfg = PipelineConfig::default();
        let a = store.save(ModelKind::Stripe, &stripe_model(1.0), &cfg).unwrap();
        let again = store.save(ModelKind::Stripe, &stripe_model(1.0), &cfg).unwrap();
        let b = store.save(ModelKind::Stripe, &stripe_model(2.0), &cfg).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, b);
        assert_eq!(a.len(), 16);
        let back: ModelFile<StripeModel> = store.load(ModelKind::Stripe, &b).unwrap();
        assert_eq!(back.model, stripe_model(2.0));
        assert_eq!(back.config_hash, cfg.hash());
        assert!(store.load::<StripeModel>(ModelKind::Segmenter, &b).is_err());
    }

    #[test]
    fn current_pointer_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = ModelStore::new(dir.path().to_path_buf());
        assert!(ModelSet::load_current(&store).unwrap().stripe.is_none());
        let id = store.save(ModelKind::Stripe, &stripe_model(1.0), &PipelineConfig::default()).unwrap();
        store.set_current(ModelKind::Stripe, &id).unwrap();
        let set = ModelSet::load_current(&store).unwrap();
        assert_eq!(set.stripe().unwrap().id, id);
        assert!(matches!(set.segmenter(), Err(PipelineError::MissingModel(ModelKind::Segmenter))));
    }

    #[test]
    fn snapshots_survive_swaps() {
        let reg = Registry::default();
        reg.install_stripe("one".into(), stripe_model(1.0));
        let before = reg.snapshot();
        reg.install_stripe("two".into(), stripe_model(2.0));
        assert_eq!(before.stripe().unwrap().id, "one");
        assert_eq!(reg.snapshot().stripe().unwrap().id, "two");
    }
}
