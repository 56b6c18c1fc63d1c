use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{ProcessedWell, PHENO_FEATURE_NAMES};
use super::{Phenotype, PhenotypeError};
use crate::boosting::{
    train_bagged, unanimous, AdaBoostConfig, BaggedEnsemble, BaggingConfig, Decision, Label, LabeledExample,
    SubsampleMode, Vote,
};

/// A binary discrimination task; `+1` is always the non-wild-type class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "WT-vs-lNR")]
    WtVsLnr,
    #[serde(rename = "WT-vs-hNR")]
    WtVsHnr,
}

impl Task {
    pub fn mutant(self) -> Phenotype {
        match self {
            Task::WtVsLnr => Phenotype::Lnr,
            Task::WtVsHnr => Phenotype::Hnr,
        }
    }

    pub fn for_mutant(p: Phenotype) -> Option<Task> {
        match p {
            Phenotype::Lnr => Some(Task::WtVsLnr),
            Phenotype::Hnr => Some(Task::WtVsHnr),
            Phenotype::Wt => None,
        }
    }

    pub fn label_of(self, p: Phenotype) -> Option<Label> {
        if p == Phenotype::Wt {
            Some(Label::Negative)
        } else if p == self.mutant() {
            Some(Label::Positive)
        } else {
            None
        }
    }

    pub fn phenotype_of(self, l: Label) -> Phenotype {
        match l {
            Label::Positive => self.mutant(),
            Label::Negative => Phenotype::Wt,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::WtVsLnr => "WT-vs-lNR",
            Task::WtVsHnr => "WT-vs-hNR",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = PhenotypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Task::WtVsLnr, Task::WtVsHnr]
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s) || t.mutant().as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PhenotypeError::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhenotypeConfig {
    pub members: usize,
    pub subsample_fraction: f64,
    pub subsample: SubsampleMode,
    pub rounds: usize,
    pub seed: u64,
    /// Weight each region's score by its area (in units of 1000 px²).
    pub area_weighted: bool,
}

impl Default for PhenotypeConfig {
    fn default() -> Self {
        PhenotypeConfig {
            members: 7,
            subsample_fraction: 0.7,
            subsample: SubsampleMode::WithoutReplacement,
            rounds: 50,
            seed: 0,
            area_weighted: false,
        }
    }
}

impl PhenotypeConfig {
    pub fn bagging(&self, seed: u64) -> BaggingConfig {
        BaggingConfig {
            members: self.members,
            subsample_fraction: self.subsample_fraction,
            subsample: self.subsample,
            boost: AdaBoostConfig {
                seed,
                ..AdaBoostConfig::with_rounds(self.rounds)
            },
            ..BaggingConfig::default()
        }
    }
}

/// Region examples from the wells of `task`'s two classes, labeled by their
/// well. Wells of other classes or without labels are skipped.
pub fn region_examples<'a>(wells: impl IntoIterator<Item = &'a ProcessedWell>, task: Task) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for w in wells {
        let Some(label) = w.known_label.and_then(|p| task.label_of(p)) else {
            continue;
        };
        out.extend(w.regions.iter().map(|r| LabeledExample::new(r.to_vec(), label)));
    }
    out
}

pub fn train_plate_classifier<'a>(
    wells: impl IntoIterator<Item = &'a ProcessedWell>,
    task: Task,
    cfg: &PhenotypeConfig,
    seed: u64,
) -> Result<BaggedEnsemble, PhenotypeError> {
    let wells: Vec<&ProcessedWell> = wells.into_iter().collect();
    for class in [Phenotype::Wt, task.mutant()] {
        if !wells.iter().any(|w| w.known_label == Some(class)) {
            return Err(PhenotypeError::MissingClass(class));
        }
    }
    let examples = region_examples(wells.iter().copied(), task);
    for (class, label) in [(Phenotype::Wt, Label::Negative), (task.mutant(), Label::Positive)] {
        if !examples.iter().any(|e| e.label == label) {
            return Err(PhenotypeError::MissingClass(class));
        }
    }
    let mut bag = train_bagged(&examples, &cfg.bagging(seed))?;
    for m in &mut bag.members {
        m.feature_names = PHENO_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    }
    Ok(bag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellScore {
    pub well_id: String,
    /// Mean over members of each region's (possibly area-weighted) score.
    pub region_scores: Vec<f64>,
    pub member_totals: Vec<f64>,
    /// Mean of the member totals.
    pub total: f64,
    pub votes: Vec<Vote>,
    pub decision: Decision,
    /// Call made when abstention is not allowed: the sign of `total`, with
    /// ties going to wild type.
    pub forced: Phenotype,
    /// The abstaining call, `None` on abstention.
    pub predicted: Option<Phenotype>,
    pub reason: Option<String>,
}

pub const NO_WORMS: &str = "no worms detected";

pub fn classify_well(bag: &BaggedEnsemble, well: &ProcessedWell, task: Task, area_weighted: bool) -> WellScore {
    let k = bag.members.len();
    let feats: Vec<Vec<f64>> = well.regions.iter().map(|r| r.to_vec()).collect();
    let weight = |i: usize| if area_weighted { well.regions[i].area / 1000.0 } else { 1.0 };
    let per_member: Vec<Vec<f64>> = bag
        .members
        .iter()
        .map(|m| feats.iter().enumerate().map(|(i, f)| weight(i) * m.score_unchecked(f)).collect())
        .collect();
    let member_totals: Vec<f64> = per_member.iter().map(|s| s.iter().sum()).collect();
    let region_scores: Vec<f64> = (0..feats.len())
        .map(|i| per_member.iter().map(|s| s[i]).sum::<f64>() / k.max(1) as f64)
        .collect();
    let total = if k > 0 { member_totals.iter().sum::<f64>() / k as f64 } else { 0.0 };
    let votes: Vec<Vote> = member_totals.iter().map(|&t| Vote::from_score(t)).collect();
    let forced = if total > 0.0 { task.mutant() } else { Phenotype::Wt };
    let (decision, reason) = if well.regions.is_empty() {
        (Decision::Abstain, Some(NO_WORMS.to_string()))
    } else {
        let d = unanimous(&votes);
        let reason = (d == Decision::Abstain).then(|| "members disagree".to_string());
        (d, reason)
    };
    WellScore {
        well_id: well.well_id.clone(),
        region_scores,
        member_totals,
        total,
        votes,
        predicted: decision.label().map(|l| task.phenotype_of(l)),
        decision,
        forced,
        reason,
    }
}
