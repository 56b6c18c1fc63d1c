use serde::{Deserialize, Serialize};

use super::BoostError;

/// Binary label, `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Negative,
    #[serde(rename = "+1")]
    Positive,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Reserved finite feature value for "no pixels to measure". It sits below
/// any real filter response so a stump can isolate it.
pub const EMPTY_REGION_SENTINEL: f64 = -1.0e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
    pub weight: f64,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self {
            features,
            label,
            weight: 1.0,
        }
    }
}

/// Single-feature threshold rule: `left` when `x[feature] < threshold`,
/// `right` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature_index: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    #[inline]
    pub fn eval(&self, features: &[f64]) -> f64 {
        if features[self.feature_index] < self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

/// Record of how an ensemble was trained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub rounds_requested: usize,
    pub seed: u64,
    /// Weighted exponential loss `Σ w₀ᵢ exp(−yᵢ F(xᵢ))` with `Σ w₀ᵢ = 1`,
    /// before the first round and after each completed round.
    pub loss_trace: Vec<f64>,
    /// Weighted training error of each round's stump.
    pub round_errors: Vec<f64>,
    /// Normalizer `Z` of each round's weight update.
    pub round_normalizers: Vec<f64>,
    /// Why training stopped before `rounds_requested`, if it did.
    pub halted: Option<String>,
}

/// Additive model: `F(x) = Σ stump(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub dimensionality: usize,
    pub stumps: Vec<Stump>,
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub training: TrainingMeta,
}

impl StumpEnsemble {
    pub fn empty(dimensionality: usize) -> Self {
        Self {
            dimensionality,
            stumps: Vec::new(),
            feature_names: Vec::new(),
            training: TrainingMeta::default(),
        }
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = names;
        self
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, BoostError> {
        if features.len() != self.dimensionality {
            return Err(BoostError::Dimensionality {
                expected: self.dimensionality,
                got: features.len(),
            });
        }
        Ok(self.score_unchecked(features))
    }

    /// Sum of stump outputs in stored order. Caller guarantees the length.
    #[inline]
    pub fn score_unchecked(&self, features: &[f64]) -> f64 {
        let mut s = 0.0;
        for st in &self.stumps {
            s += st.eval(features);
        }
        s
    }

    /// Distinct feature indices referenced by the stumps, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.stumps.iter().map(|s| s.feature_index).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        for s in &self.stumps {
            if s.feature_index >= self.dimensionality {
                return Err(BoostError::InvalidModel(format!(
                    "stump feature {} out of range for dimensionality {}",
                    s.feature_index, self.dimensionality
                )));
            }
            if !(s.left.is_finite() && s.right.is_finite() && !s.threshold.is_nan()) {
                return Err(BoostError::InvalidModel("non-finite stump parameters".into()));
            }
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.dimensionality {
            return Err(BoostError::InvalidModel("feature name count disagrees with dimensionality".into()));
        }
        Ok(())
    }
}

pub fn score(model: &StumpEnsemble, features: &[f64]) -> Result<f64, BoostError> {
    model.score(features)
}
