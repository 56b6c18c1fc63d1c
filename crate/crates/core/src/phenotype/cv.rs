use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classify::{classify_well, train_plate_classifier, PhenotypeConfig, Task, WellScore};
use super::features::ProcessedWell;
use super::{Phenotype, PhenotypeError};
use crate::boosting::{derive_seed, BaggedEnsemble};

/// Anything that can be trained on some wells of a plate and then score
/// the others.
pub trait PlateClassifier: Sync {
    type Model: Send;

    fn train(&self, wells: &[&ProcessedWell], task: Task, seed: u64) -> Result<Self::Model, PhenotypeError>;

    fn classify(&self, model: &Self::Model, well: &ProcessedWell, task: Task) -> WellScore;
}

/// The bagged per-plate region classifier.
pub struct BaggedClassifier {
    pub cfg: PhenotypeConfig,
}

impl PlateClassifier for BaggedClassifier {
    type Model = BaggedEnsemble;

    fn train(&self, wells: &[&ProcessedWell], task: Task, seed: u64) -> Result<BaggedEnsemble, PhenotypeError> {
        train_plate_classifier(wells.iter().copied(), task, &self.cfg, seed)
    }

    fn classify(&self, model: &BaggedEnsemble, well: &ProcessedWell, task: Task) -> WellScore {
        classify_well(model, well, task, self.cfg.area_weighted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 2,
            replicates: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellDecision {
    pub well_id: String,
    pub truth: Phenotype,
    pub forced: Phenotype,
    /// `None` on abstention.
    pub predicted: Option<Phenotype>,
    pub total: f64,
    pub reason: Option<String>,
}

/// Error and abstention rates over a set of decisions, in percent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub error_without_pct: f64,
    /// Errors among the wells that were not abstained on; 0 when all were.
    pub error_with_pct: f64,
    pub abstention_pct: f64,
}

pub fn pct(count: usize, of: usize) -> f64 {
    if of == 0 {
        0.0
    } else {
        100.0 * count as f64 / of as f64
    }
}

impl Rates {
    pub fn of(decisions: &[WellDecision]) -> Rates {
        let n = decisions.len();
        let wrong_forced = decisions.iter().filter(|d| d.forced != d.truth).count();
        let called: Vec<&WellDecision> = decisions.iter().filter(|d| d.predicted.is_some()).collect();
        let wrong_called = called.iter().filter(|d| d.predicted != Some(d.truth)).count();
        Rates {
            error_without_pct: pct(wrong_forced, n),
            error_with_pct: pct(wrong_called, called.len()),
            abstention_pct: pct(n - called.len(), n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_wells: usize,
    pub test_wells: usize,
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub rates: Rates,
    pub decisions: Vec<WellDecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub positive: Phenotype,
    pub negative: Phenotype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateReport {
    pub plate_id: String,
    pub task: Task,
    pub label_mapping: LabelMapping,
    pub folds: usize,
    pub replicate_count: usize,
    /// Means over replicates.
    pub rates: Rates,
    /// Percentage of test decisions on wells without any detected worm.
    pub no_worm_pct: f64,
    pub replicates: Vec<ReplicateResult>,
}

/// Class-stratified assignment of wells to `folds` folds.
pub fn stratified_folds(wells: &[&ProcessedWell], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; wells.len()];
    for class in Phenotype::ALL {
        let mut idx: Vec<usize> = (0..wells.len()).filter(|&i| wells[i].known_label == Some(class)).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    assignment
}

/// Repeated stratified k-fold cross-validation over the wells of `task`'s two
/// classes. Replicates run in parallel with independent seeds.
pub fn cross_validate<C: PlateClassifier>(
    plate_id: &str,
    wells: &[ProcessedWell],
    task: Task,
    classifier: &C,
    cfg: &CvConfig,
) -> Result<PlateReport, PhenotypeError> {
    if cfg.folds < 2 || cfg.replicates == 0 {
        return Err(PhenotypeError::Config("cross-validation needs at least 2 folds and 1 replicate".into()));
    }
    let used: Vec<&ProcessedWell> =
        wells.iter().filter(|w| w.known_label.and_then(|p| task.label_of(p)).is_some()).collect();
    for class in [Phenotype::Wt, task.mutant()] {
        let count = used.iter().filter(|w| w.known_label == Some(class)).count();
        if count < cfg.folds.max(2) {
            return Err(PhenotypeError::InsufficientWells { class, count, needed: cfg.folds.max(2) });
        }
    }
    let replicates: Vec<ReplicateResult> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r);
            let assignment = stratified_folds(&used, cfg.folds, seed);
            let mut folds = Vec::with_capacity(cfg.folds);
            let mut decisions = Vec::with_capacity(used.len());
            for f in 0..cfg.folds {
                let train: Vec<&ProcessedWell> =
                    used.iter().zip(&assignment).filter(|(_, &a)| a != f).map(|(w, _)| *w).collect();
                let test: Vec<&ProcessedWell> =
                    used.iter().zip(&assignment).filter(|(_, &a)| a == f).map(|(w, _)| *w).collect();
                let model = classifier.train(&train, task, derive_seed(seed, f))?;
                let fold_decisions: Vec<WellDecision> = test
                    .iter()
                    .map(|w| {
                        let s = classifier.classify(&model, w, task);
                        WellDecision {
                            well_id: w.well_id.clone(),
                            truth: w.known_label.expect("filtered to labeled wells"),
                            forced: s.forced,
                            predicted: s.predicted,
                            total: s.total,
                            reason: s.reason,
                        }
                    })
                    .collect();
                folds.push(FoldResult {
                    fold: f,
                    train_wells: train.len(),
                    test_wells: test.len(),
                    rates: Rates::of(&fold_decisions),
                });
                decisions.extend(fold_decisions);
            }
            Ok(ReplicateResult {
                replicate: r,
                seed,
                folds,
                rates: Rates::of(&decisions),
                decisions,
            })
        })
        .collect::<Result<_, PhenotypeError>>()?;
    let n = replicates.len() as f64;
    let mean = |f: fn(&Rates) -> f64| replicates.iter().map(|r| f(&r.rates)).sum::<f64>() / n;
    let rates = Rates {
        error_without_pct: mean(|r| r.error_without_pct),
        error_with_pct: mean(|r| r.error_with_pct),
        abstention_pct: mean(|r| r.abstention_pct),
    };
    let total: usize = replicates.iter().map(|r| r.decisions.len()).sum();
    let no_worms = replicates
        .iter()
        .flat_map(|r| &r.decisions)
        .filter(|d| d.reason.as_deref() == Some(super::classify::NO_WORMS))
        .count();
    Ok(PlateReport {
        plate_id: plate_id.into(),
        task,
        label_mapping: LabelMapping {
            positive: task.mutant(),
            negative: Phenotype::Wt,
        },
        folds: cfg.folds,
        replicate_count: cfg.replicates,
        rates,
        no_worm_pct: pct(no_worms, total),
        replicates,
    })
}

pub const TABLE_HEADER: [&str; 7] = [
    "Type",
    "Plate number",
    "Experimentalist 1 Error (%)",
    "Experimentalist 2 Error (%)",
    "Automated method's error - without abstention (%)",
    "Automated method's error - with abstention (%)",
    "Examples on which we abstain (%)",
];

/// Tab-separated table in the layout of the published comparison; the
/// human columns are left as `-`.
pub fn format_table(reports: &[PlateReport]) -> String {
    let mut out = TABLE_HEADER.join("\t");
    out.push('\n');
    for r in reports {
        let row = [
            format!("wild type vs {}", r.task.mutant()),
            r.plate_id.clone(),
            "-".into(),
            "-".into(),
            format!("{:.1}", r.rates.error_without_pct),
            format!("{:.1}", r.rates.error_with_pct),
            format!("{:.1}", r.rates.abstention_pct),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}
