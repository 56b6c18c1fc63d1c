use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blobs::{blob_features, Blob, BlobConfig, BLOB_FEATURE_NAMES};
use super::FluorError;
use crate::boosting::{train_adaboost, AdaBoostConfig, Label, LabeledExample, StumpEnsemble};
use crate::imagecore::{trace_outline, Mask};

pub const STRIPE_MODEL_FORMAT: &str = "wormscreen.stripe-model/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeModel {
    pub format: String,
    pub ensemble: StumpEnsemble,
    pub blob: BlobConfig,
}

impl StripeModel {
    pub fn new(ensemble: StumpEnsemble, blob: BlobConfig) -> Self {
        Self {
            format: STRIPE_MODEL_FORMAT.into(),
            ensemble,
            blob,
        }
    }

    pub fn score(&self, b: &Blob) -> f64 {
        self.ensemble.score_unchecked(&blob_features(b))
    }

    pub fn validate(&self) -> Result<(), FluorError> {
        if self.format != STRIPE_MODEL_FORMAT {
            return Err(FluorError::Format(format!("unexpected format tag {:?}", self.format)));
        }
        if self.ensemble.dimensionality != BLOB_FEATURE_NAMES.len() {
            return Err(FluorError::Format(format!(
                "model has {} features, blobs have {}",
                self.ensemble.dimensionality,
                BLOB_FEATURE_NAMES.len()
            )));
        }
        self.ensemble.validate()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FluorError> {
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| FluorError::Format(e.to_string()))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| FluorError::io(path, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| FluorError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, FluorError> {
        let bytes = std::fs::read(path).map_err(|e| FluorError::io(path, e))?;
        let m: StripeModel = serde_json::from_slice(&bytes).map_err(|e| FluorError::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

pub fn train_stripe_model(labeled: &[(Blob, Label)], blob: &BlobConfig, boost: &AdaBoostConfig) -> Result<StripeModel, FluorError> {
    let examples: Vec<LabeledExample> = labeled
        .iter()
        .map(|(b, l)| LabeledExample::new(blob_features(b), *l))
        .collect();
    let mut ensemble = train_adaboost(&examples, boost)?;
    ensemble.feature_names = BLOB_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(StripeModel::new(ensemble, blob.clone()))
}

/// Blobs with positive score, in input order.
pub fn classify_stripes(model: &StripeModel, blobs: &[Blob]) -> Vec<Blob> {
    blobs.iter().filter(|b| model.score(b) > 0.0).cloned().collect()
}

/// Label each blob a stripe when at least `min_overlap` of its pixels lie in
/// the reference stripe mask.
pub fn label_blobs_from_mask(blobs: &[Blob], stripes: &Mask, min_overlap: f64) -> Vec<Label> {
    blobs
        .iter()
        .map(|b| {
            let hit = b.region.pixels.iter().filter(|&&(x, y)| stripes.get(x, y)).count();
            if hit as f64 >= min_overlap * b.region.area as f64 {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripeLabel {
    Stripe,
    Other,
}

impl StripeLabel {
    pub fn toggled(self) -> Self {
        match self {
            StripeLabel::Stripe => StripeLabel::Other,
            StripeLabel::Other => StripeLabel::Stripe,
        }
    }

    pub fn to_label(self) -> Label {
        match self {
            StripeLabel::Stripe => Label::Positive,
            StripeLabel::Other => Label::Negative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobLabel {
    pub blob_id: usize,
    pub outline: Vec<(i64, i64)>,
    pub label: StripeLabel,
}

/// Per-image stripe label file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StripeLabelFile {
    pub image_id: String,
    pub blobs: Vec<BlobLabel>,
}

impl StripeLabelFile {
    pub fn new(image_id: &str, blobs: &[Blob], labels: &[StripeLabel]) -> Self {
        StripeLabelFile {
            image_id: image_id.into(),
            blobs: blobs
                .iter()
                .zip(labels)
                .map(|(b, &label)| BlobLabel {
                    blob_id: b.id,
                    outline: trace_outline(&b.region),
                    label,
                })
                .collect(),
        }
    }

    /// Pair labels with blobs by id; blobs without a label are skipped.
    pub fn pair<'a>(&self, blobs: &'a [Blob]) -> Result<Vec<(&'a Blob, Label)>, FluorError> {
        self.blobs
            .iter()
            .map(|l| {
                blobs
                    .iter()
                    .find(|b| b.id == l.blob_id)
                    .map(|b| (b, l.label.to_label()))
                    .ok_or(FluorError::UnknownBlob(l.blob_id))
            })
            .collect()
    }
}

/// One row of the exported stripe feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeRecord {
    pub blob_id: usize,
    pub label: u16,
    pub centroid: (f64, f64),
    pub area: usize,
    pub score: f64,
    pub features: Vec<f64>,
}

/// Label map (stripe `k` gets value `k + 1`) and feature table.
pub fn export_stripes(model: &StripeModel, stripes: &[Blob], width: usize, height: usize) -> (Vec<u16>, Vec<StripeRecord>) {
    let mut labels = vec![0u16; width * height];
    let mut rows = Vec::with_capacity(stripes.len());
    for (k, b) in stripes.iter().enumerate() {
        let id = (k + 1) as u16;
        for &(x, y) in &b.region.pixels {
            labels[y * width + x] = id;
        }
        rows.push(StripeRecord {
            blob_id: b.id,
            label: id,
            centroid: b.region.centroid,
            area: b.region.area,
            score: model.score(b),
            features: blob_features(b),
        });
    }
    (labels, rows)
}
