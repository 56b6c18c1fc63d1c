//! Bagged committee of boosted ensembles with unanimity abstention.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adaboost::{train_adaboost, AdaBoostConfig};
use super::stump::{Label, LabeledExample, StumpEnsemble};
use super::BoostError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    WithoutReplacement,
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaggingConfig {
    pub members: usize,
    pub subsample_fraction: f64,
    pub subsample: SubsampleMode,
    pub boost: AdaBoostConfig,
    pub max_resample_attempts: usize,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        Self {
            members: 7,
            subsample_fraction: 0.7,
            subsample: SubsampleMode::WithoutReplacement,
            boost: AdaBoostConfig::with_rounds(50),
            max_resample_attempts: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaggedEnsemble {
    pub members: Vec<StumpEnsemble>,
    pub subsample_fraction: f64,
    pub subsample: SubsampleMode,
    pub seed: u64,
}

/// One member's verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Positive,
    Negative,
    /// Score exactly zero.
    Tie,
}

impl Vote {
    pub fn from_score(s: f64) -> Self {
        if s > 0.0 {
            Vote::Positive
        } else if s < 0.0 {
            Vote::Negative
        } else {
            Vote::Tie
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Label(Label),
    Abstain,
}

impl Decision {
    pub fn label(self) -> Option<Label> {
        match self {
            Decision::Label(l) => Some(l),
            Decision::Abstain => None,
        }
    }
}

/// Unanimity rule: every vote agrees and none is a tie.
pub fn unanimous(votes: &[Vote]) -> Decision {
    let Some(&first) = votes.first() else {
        return Decision::Abstain;
    };
    if votes.iter().any(|&v| v != first) {
        return Decision::Abstain;
    }
    match first {
        Vote::Positive => Decision::Label(Label::Positive),
        Vote::Negative => Decision::Label(Label::Negative),
        Vote::Tie => Decision::Abstain,
    }
}

/// Independent sub-seed number `index` of `seed`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

fn draw_subset(
    examples: &[LabeledExample],
    cfg: &BaggingConfig,
    member: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledExample>, BoostError> {
    let n = examples.len();
    let m = ((cfg.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    for _ in 0..cfg.max_resample_attempts.max(1) {
        let idx: Vec<usize> = match cfg.subsample {
            SubsampleMode::WithoutReplacement => {
                let mut v = sample(rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            SubsampleMode::Bootstrap => (0..m).map(|_| rng.random_range(0..n)).collect(),
        };
        let pos = idx.iter().any(|&i| examples[i].label == Label::Positive);
        let neg = idx.iter().any(|&i| examples[i].label == Label::Negative);
        if pos && neg {
            return Ok(idx.into_iter().map(|i| examples[i].clone()).collect());
        }
    }
    Err(BoostError::SubsampleFailed {
        member,
        attempts: cfg.max_resample_attempts.max(1),
    })
}

/// Draw the subset that member `index` of a bag trained with `cfg` uses.
pub fn member_subset(
    examples: &[LabeledExample],
    cfg: &BaggingConfig,
    index: usize,
) -> Result<Vec<LabeledExample>, BoostError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.boost.seed, index));
    draw_subset(examples, cfg, index, &mut rng)
}

pub fn train_bagged(examples: &[LabeledExample], cfg: &BaggingConfig) -> Result<BaggedEnsemble, BoostError> {
    if cfg.members == 0 {
        return Err(BoostError::EmptyCommittee);
    }
    if !(cfg.subsample_fraction > 0.0 && cfg.subsample_fraction <= 1.0) {
        return Err(BoostError::InvalidFraction(cfg.subsample_fraction));
    }
    if cfg.boost.rounds == 0 {
        return Err(BoostError::ZeroRounds);
    }
    let has_pos = examples.iter().any(|e| e.label == Label::Positive);
    let has_neg = examples.iter().any(|e| e.label == Label::Negative);
    if !(has_pos && has_neg) {
        return Err(BoostError::SingleClass);
    }
    let members = (0..cfg.members)
        .into_par_iter()
        .map(|k| {
            let subset = member_subset(examples, cfg, k)?;
            let boost = AdaBoostConfig {
                seed: derive_seed(cfg.boost.seed, k),
                ..cfg.boost.clone()
            };
            train_adaboost(&subset, &boost)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BaggedEnsemble {
        members,
        subsample_fraction: cfg.subsample_fraction,
        subsample: cfg.subsample,
        seed: cfg.boost.seed,
    })
}

impl BaggedEnsemble {
    pub fn dimensionality(&self) -> usize {
        self.members.first().map_or(0, |m| m.dimensionality)
    }

    pub fn member_scores(&self, features: &[f64]) -> Result<Vec<f64>, BoostError> {
        self.members.iter().map(|m| m.score(features)).collect()
    }

    pub fn votes(&self, features: &[f64]) -> Result<Vec<Vote>, BoostError> {
        Ok(self.member_scores(features)?.into_iter().map(Vote::from_score).collect())
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        if self.members.is_empty() {
            return Err(BoostError::EmptyCommittee);
        }
        let d = self.dimensionality();
        for m in &self.members {
            m.validate()?;
            if m.dimensionality != d {
                return Err(BoostError::InvalidModel("members disagree on dimensionality".into()));
            }
        }
        Ok(())
    }
}

pub fn classify_with_abstention(bag: &BaggedEnsemble, features: &[f64]) -> Result<Decision, BoostError> {
    Ok(unanimous(&bag.votes(features)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{weighted_training_error, Stump};

    fn constant_member(c: f64) -> StumpEnsemble {
        let mut m = StumpEnsemble::empty(1);
        m.stumps.push(Stump {
            feature_index: 0,
            threshold: 0.0,
            left: c,
            right: c,
        });
        m
    }

    fn bag_of(scores: &[f64]) -> BaggedEnsemble {
        BaggedEnsemble {
            members: scores.iter().map(|&c| constant_member(c)).collect(),
            subsample_fraction: 1.0,
            subsample: SubsampleMode::WithoutReplacement,
            seed: 0,
        }
    }

    fn separable(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                LabeledExample::new(vec![x, (i * 7 % 13) as f64], Label::from_bool(x >= 0.5))
            })
            .collect()
    }

    #[test]
    fn all_positive_members_give_positive() {
        let bag = bag_of(&[1.0; 7]);
        assert_eq!(classify_with_abstention(&bag, &[0.0]).unwrap(), Decision::Label(Label::Positive));
    }

    #[test]
    fn single_dissent_abstains() {
        let bag = bag_of(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0]);
        assert_eq!(classify_with_abstention(&bag, &[0.0]).unwrap(), Decision::Abstain);
    }

    #[test]
    fn zero_score_abstains() {
        let bag = bag_of(&[1.0, 1.0, 0.0]);
        assert_eq!(classify_with_abstention(&bag, &[0.0]).unwrap(), Decision::Abstain);
    }

    #[test]
    fn single_member_never_abstains_on_nonzero() {
        for s in [-2.0, -0.1, 0.3, 5.0] {
            assert!(classify_with_abstention(&bag_of(&[s]), &[0.0]).unwrap().label().is_some());
        }
    }

    #[test]
    fn k1_matches_plain_adaboost_on_its_subsample() {
        let data = separable(40);
        let cfg = BaggingConfig {
            members: 1,
            boost: AdaBoostConfig { rounds: 5, seed: 9, ..AdaBoostConfig::default() },
            ..BaggingConfig::default()
        };
        let bag = train_bagged(&data, &cfg).unwrap();
        let subset = member_subset(&data, &cfg, 0).unwrap();
        let plain = train_adaboost(&subset, &AdaBoostConfig { seed: derive_seed(9, 0), ..cfg.boost.clone() }).unwrap();
        assert_eq!(bag.members[0], plain);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = separable(60);
        let cfg = BaggingConfig::default();
        let a = train_bagged(&data, &cfg).unwrap();
        let b = train_bagged(&data, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.members.len(), 7);
    }

    #[test]
    fn separable_members_fit_their_subsets() {
        let data = separable(60);
        let cfg = BaggingConfig::default();
        let bag = train_bagged(&data, &cfg).unwrap();
        for (k, m) in bag.members.iter().enumerate() {
            let subset = member_subset(&data, &cfg, k).unwrap();
            assert_eq!(weighted_training_error(m, &subset), 0.0, "member {k}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let data = separable(20);
        let mut cfg = BaggingConfig { members: 0, ..BaggingConfig::default() };
        assert!(matches!(train_bagged(&data, &cfg), Err(BoostError::EmptyCommittee)));
        cfg.members = 3;
        cfg.subsample_fraction = 0.0;
        assert!(matches!(train_bagged(&data, &cfg), Err(BoostError::InvalidFraction(_))));
    }

    #[test]
    fn impossible_subsample_errors() {
        // One positive among many: a 1-example subsample can never hold both classes.
        let mut data: Vec<_> = (0..50).map(|i| LabeledExample::new(vec![i as f64], Label::Negative)).collect();
        data[0].label = Label::Positive;
        let cfg = BaggingConfig { subsample_fraction: 0.01, ..BaggingConfig::default() };
        assert!(matches!(train_bagged(&data, &cfg), Err(BoostError::SubsampleFailed { .. })));
    }
}
