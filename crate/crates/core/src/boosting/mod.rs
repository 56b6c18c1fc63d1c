//! Decision-stump AdaBoost, bagged committees with unanimous-vote abstention,
//! and model persistence.

mod adaboost;
mod bagging;
pub mod model_io;
mod stump;

use thiserror::Error;

pub use adaboost::{
    classic_error_bound, train_adaboost, weighted_training_error, AdaBoostConfig, Booster, SplitCandidate,
    StumpMode,
};
pub use bagging::{
    classify_with_abstention, derive_seed, member_subset, train_bagged, unanimous, BaggedEnsemble, BaggingConfig, Decision, SubsampleMode,
    Vote,
};
pub(crate) use adaboost::midpoint;
pub use stump::{score, Label, LabeledExample, Stump, StumpEnsemble, TrainingMeta, EMPTY_REGION_SENTINEL};

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("feature vector has {got} entries, model expects {expected}")]
    Dimensionality { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("training set is empty")]
    NoExamples,
    #[error("training set contains only one class")]
    SingleClass,
    #[error("feature values must be finite")]
    NonFiniteFeature,
    #[error("example weight {0} must be positive and finite")]
    InvalidWeight(f64),
    #[error("number of rounds must be at least 1")]
    ZeroRounds,
    #[error("no informative stump: {0}")]
    NoInformativeStump(String),
    #[error("committee size must be at least 1")]
    EmptyCommittee,
    #[error("subsample fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("member {member}: could not draw a subsample with both classes in {attempts} attempts")]
    SubsampleFailed { member: usize, attempts: usize },
    #[error("model format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
