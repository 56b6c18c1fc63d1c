//! Per-plate phenotype classification from worm regions and their stripes.

mod classify;
mod cv;
mod diagnostic;
mod features;
mod manifest;

use std::path::PathBuf;

use thiserror::Error;

pub use classify::{
    classify_well, region_examples, train_plate_classifier, PhenotypeConfig, Task, WellScore, NO_WORMS,
};
pub use cv::{
    cross_validate, format_table, pct, stratified_folds, BaggedClassifier, CvConfig, FoldResult, LabelMapping,
    PlateClassifier, PlateReport, Rates, ReplicateResult, WellDecision, TABLE_HEADER,
};
pub use diagnostic::{
    intensity_histogram_diagnostic, ks_statistic, ClassDistribution, ClassSeparation, Histogram, IntensityDiagnostic,
};
pub use features::{process_well, region_features, ProcessedWell, RegionPhenoFeatures, PHENO_FEATURE_NAMES};
pub use manifest::{Phenotype, PlateManifest, Role, WellRecord};

use crate::boosting::BoostError;

#[derive(Debug, Error)]
pub enum PhenotypeError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("no training regions for class {0}")]
    MissingClass(Phenotype),
    #[error("class {class} has {count} wells; at least {needed} are needed")]
    InsufficientWells {
        class: Phenotype,
        count: usize,
        needed: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Boost(#[from] BoostError),
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::boosting::{Decision, Label, StumpEnsemble, BaggedEnsemble, SubsampleMode, Vote};
    use crate::fluor::{featurize, Blob};
    use crate::imagecore::{GrayImage, Mask, Region};

    fn rect_region(x0: usize, y0: usize, w: usize, h: usize) -> Region {
        Region::from_pixels((y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x, y))).collect())
    }

    fn blob(r: Region, fl: &GrayImage) -> Blob {
        featurize(0, r, fl, 2, None, None)
    }

    #[test]
    fn region_without_stripes() {
        let fl = GrayImage::filled(20, 20, 0.3);
        let f = region_features(&rect_region(2, 2, 10, 5), &[], &fl);
        assert_eq!((f.ratio, f.stripe_q50, f.stripe_q90, f.stripe_count, f.patchiness), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(f.area, 50.0);
    }

    #[test]
    fn stripe_covering_region() {
        let fl = GrayImage::filled(20, 20, 0.3);
        let r = rect_region(2, 2, 10, 5);
        let f = region_features(&r, &[blob(rect_region(0, 0, 15, 10), &fl)], &fl);
        assert_eq!(f.ratio, 1.0);
        assert_eq!(f.stripe_count, 1.0);
        assert_eq!(f.stripe_q50, 1.0);
        assert_eq!(f.patchiness, 20.0);
    }

    #[test]
    fn features_ignore_exposure() {
        let fl = GrayImage::from_fn(30, 20, |x, y| 0.1 + ((x * 5 + y * 3) % 7) as f64 / 20.0);
        let bright = fl.map(|v| 2.5 * v);
        let r = rect_region(3, 3, 20, 10);
        let s = rect_region(5, 5, 10, 3);
        let a = region_features(&r, &[blob(s.clone(), &fl)], &fl);
        let b = region_features(&r, &[blob(s, &bright)], &bright);
        for (x, y) in a.to_vec().into_iter().zip(b.to_vec()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn ratio_matches_pixel_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (w, h) = (30, 30);
            let fl = GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0);
            let region_mask = Mask::from_fn(w, h, |_, _| rng.random_bool(0.6));
            let Some(region) = crate::imagecore::connected_components(&region_mask).into_iter().max_by_key(|r| r.area) else {
                continue;
            };
            let mut taken = Mask::new(w, h);
            let mut stripes = Vec::new();
            for _ in 0..4 {
                let (x0, y0) = (rng.random_range(0..25), rng.random_range(0..25));
                let px: Vec<(usize, usize)> = (y0..y0 + 5)
                    .flat_map(|y| (x0..x0 + 5).map(move |x| (x, y)))
                    .filter(|&(x, y)| !taken.get(x, y))
                    .collect();
                if px.is_empty() {
                    continue;
                }
                for &(x, y) in &px {
                    taken.set(x, y, true);
                }
                stripes.push(blob(Region::from_pixels(px), &fl));
            }
            let f = region_features(&region, &stripes, &fl);
            let inter = taken.intersection_count(&region.to_mask(w, h));
            assert_eq!(f.stripe_area, inter as f64);
            assert_eq!(f.ratio, inter as f64 / region.area as f64);
            assert!((0.0..=1.0).contains(&f.ratio));
        }
    }

    fn toy_well(id: usize, label: Phenotype, ratios: &[f64]) -> ProcessedWell {
        ProcessedWell {
            well_id: format!("W{id}"),
            known_label: Some(label),
            regions: ratios
                .iter()
                .map(|&r| RegionPhenoFeatures {
                    area: 600.0,
                    eccentricity: 0.9,
                    stripe_count: 2.0,
                    stripe_area: 600.0 * r,
                    ratio: r,
                    stripe_q50: 0.3,
                    stripe_q90: 0.4,
                    patchiness: 3.3,
                    boundary_contrast: 0.1,
                })
                .collect(),
            mean_worm_intensity: 0.2,
            stripe_ratio: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
        }
    }

    fn toy_plate(n_per_class: usize, seed: u64) -> Vec<ProcessedWell> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wells = Vec::new();
        for i in 0..2 * n_per_class {
            let (label, base) = if i % 2 == 0 { (Phenotype::Wt, 0.25) } else { (Phenotype::Hnr, 0.45) };
            let k = rng.random_range(1..5);
            let ratios: Vec<f64> = (0..k).map(|_| base + rng.random_range(-0.05..0.05)).collect();
            wells.push(toy_well(i, label, &ratios));
        }
        wells
    }

    #[test]
    fn separable_plate_trains_without_error() {
        let wells = toy_plate(12, 1);
        let bag = train_plate_classifier(&wells, Task::WtVsHnr, &PhenotypeConfig::default(), 3).unwrap();
        assert_eq!(bag.members.len(), 7);
        for w in &wells {
            for r in &w.regions {
                for m in &bag.members {
                    let s = m.score_unchecked(&r.to_vec());
                    assert_eq!(s > 0.0, w.known_label == Some(Phenotype::Hnr));
                }
            }
        }
        let again = train_plate_classifier(&wells, Task::WtVsHnr, &PhenotypeConfig::default(), 3).unwrap();
        assert_eq!(bag, again);
        let n_regions: usize = wells.iter().map(|w| w.regions.len()).sum();
        assert_eq!(region_examples(&wells, Task::WtVsHnr).len(), n_regions);
    }

    #[test]
    fn missing_class_is_named() {
        let wells: Vec<ProcessedWell> = toy_plate(5, 2).into_iter().filter(|w| w.known_label == Some(Phenotype::Wt)).collect();
        let err = train_plate_classifier(&wells, Task::WtVsHnr, &PhenotypeConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("hNR"), "{err}");
    }

    fn constant_bag(totals: &[f64]) -> BaggedEnsemble {
        // One stump per member whose both outputs are the given value.
        BaggedEnsemble {
            members: totals
                .iter()
                .map(|&t| {
                    let mut e = StumpEnsemble::empty(PHENO_FEATURE_NAMES.len());
                    e.stumps.push(crate::boosting::Stump {
                        feature_index: 0,
                        threshold: 0.0,
                        left: t,
                        right: t,
                    });
                    e
                })
                .collect(),
            subsample_fraction: 0.7,
            subsample: SubsampleMode::WithoutReplacement,
            seed: 0,
        }
    }

    #[test]
    fn well_decisions_follow_unanimity() {
        let well = toy_well(0, Phenotype::Wt, &[0.3]);
        let s = classify_well(&constant_bag(&[1.0; 7]), &well, Task::WtVsLnr, false);
        assert_eq!(s.decision, Decision::Label(Label::Positive));
        assert_eq!(s.predicted, Some(Phenotype::Lnr));
        let s = classify_well(&constant_bag(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0]), &well, Task::WtVsLnr, false);
        assert_eq!(s.decision, Decision::Abstain);
        assert_eq!(s.forced, Phenotype::Lnr);
        let s = classify_well(&constant_bag(&[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]), &well, Task::WtVsLnr, false);
        assert_eq!(s.decision, Decision::Abstain);
        assert_eq!(s.votes[3], Vote::Tie);
        let empty = toy_well(1, Phenotype::Wt, &[]);
        let s = classify_well(&constant_bag(&[1.0; 7]), &empty, Task::WtVsLnr, false);
        assert_eq!(s.decision, Decision::Abstain);
        assert_eq!(s.reason.as_deref(), Some(NO_WORMS));
        assert_eq!(s.forced, Phenotype::Wt);
    }

    #[test]
    fn well_total_is_sum_of_region_scores_and_order_free() {
        let wells = toy_plate(10, 5);
        let bag = train_plate_classifier(&wells, Task::WtVsHnr, &PhenotypeConfig::default(), 1).unwrap();
        let mut w = toy_well(99, Phenotype::Hnr, &[0.2, 0.3, 0.5, 0.44]);
        let a = classify_well(&bag, &w, Task::WtVsHnr, false);
        assert!((a.region_scores.iter().sum::<f64>() - a.total).abs() < 1e-9);
        w.regions.reverse();
        let b = classify_well(&bag, &w, Task::WtVsHnr, false);
        assert_eq!(a.decision, b.decision);
        assert!((a.total - b.total).abs() < 1e-9);
    }

    struct Oracle;

    impl PlateClassifier for Oracle {
        type Model = ();

        fn train(&self, _: &[&ProcessedWell], _: Task, _: u64) -> Result<(), PhenotypeError> {
            Ok(())
        }

        fn classify(&self, _: &(), well: &ProcessedWell, task: Task) -> WellScore {
            let truth = well.known_label.unwrap();
            let label = task.label_of(truth).unwrap();
            WellScore {
                well_id: well.well_id.clone(),
                region_scores: vec![],
                member_totals: vec![],
                total: 0.0,
                votes: vec![],
                decision: Decision::Label(label),
                forced: truth,
                predicted: Some(truth),
                reason: None,
            }
        }
    }

    // Gets the listed wells wrong with a forced call and abstains on them.
    struct Wrong(Vec<String>);

    impl PlateClassifier for Wrong {
        type Model = ();

        fn train(&self, _: &[&ProcessedWell], _: Task, _: u64) -> Result<(), PhenotypeError> {
            Ok(())
        }

        fn classify(&self, _: &(), well: &ProcessedWell, task: Task) -> WellScore {
            let mut s = Oracle.classify(&(), well, task);
            if self.0.contains(&well.well_id) {
                s.forced = if s.forced == Phenotype::Wt { task.mutant() } else { Phenotype::Wt };
                s.predicted = None;
                s.decision = Decision::Abstain;
            }
            s
        }
    }

    #[test]
    fn oracle_classifier_scores_zero() {
        let wells = toy_plate(24, 9);
        let r = cross_validate("p", &wells, Task::WtVsHnr, &Oracle, &CvConfig::default()).unwrap();
        assert_eq!(r.rates, Rates::default());
        assert_eq!(r.replicates.len(), 20);
        for rep in &r.replicates {
            assert_eq!(rep.decisions.len(), 48);
            assert!(rep.folds.iter().all(|f| f.test_wells == 24 && f.train_wells == 24));
        }
    }

    #[test]
    fn two_wrong_of_48_is_4_17_percent() {
        let wells = toy_plate(24, 9);
        let wrong = Wrong(vec!["W0".into(), "W1".into()]);
        let r = cross_validate("p", &wells, Task::WtVsHnr, &wrong, &CvConfig::default()).unwrap();
        assert!((r.rates.error_without_pct - 4.1666).abs() < 1e-3);
        assert_eq!(format!("{:.2}", r.rates.error_without_pct), "4.17");
        assert_eq!(r.rates.error_with_pct, 0.0);
        assert!((r.rates.abstention_pct - 4.1666).abs() < 1e-3);
    }

    #[test]
    fn single_member_never_abstains_except_without_worms() {
        let wells = toy_plate(10, 3);
        let cfg = PhenotypeConfig {
            members: 1,
            subsample_fraction: 1.0,
            ..PhenotypeConfig::default()
        };
        let r = cross_validate("p", &wells, Task::WtVsHnr, &BaggedClassifier { cfg }, &CvConfig { replicates: 4, ..CvConfig::default() }).unwrap();
        assert_eq!(r.rates.abstention_pct, 0.0);
        assert_eq!(r.rates.error_with_pct, r.rates.error_without_pct);
    }

    #[test]
    fn too_few_wells_rejected() {
        let wells = vec![toy_well(0, Phenotype::Wt, &[0.2]), toy_well(1, Phenotype::Wt, &[0.2]), toy_well(2, Phenotype::Lnr, &[0.1])];
        assert!(matches!(
            cross_validate("p", &wells, Task::WtVsLnr, &Oracle, &CvConfig::default()),
            Err(PhenotypeError::InsufficientWells { class: Phenotype::Lnr, .. })
        ));
    }

    #[test]
    fn stratified_halves_are_balanced() {
        let wells = toy_plate(24, 2);
        let refs: Vec<&ProcessedWell> = wells.iter().collect();
        let a = stratified_folds(&refs, 2, 11);
        for class in [Phenotype::Wt, Phenotype::Hnr] {
            let in_first = refs.iter().zip(&a).filter(|(w, &f)| w.known_label == Some(class) && f == 0).count();
            assert_eq!(in_first, 12);
        }
        assert_ne!(a, stratified_folds(&refs, 2, 12));
    }

    #[test]
    fn table_formats_published_magnitudes() {
        let mk = |task, plate: &str, r: Rates| PlateReport {
            plate_id: plate.into(),
            task,
            label_mapping: LabelMapping {
                positive: task.mutant(),
                negative: Phenotype::Wt,
            },
            folds: 2,
            replicate_count: 20,
            rates: r,
            no_worm_pct: 0.0,
            replicates: vec![],
        };
        let t = format_table(&[
            mk(Task::WtVsLnr, "1", Rates { error_without_pct: 0.4, error_with_pct: 0.0, abstention_pct: 5.4 }),
            mk(Task::WtVsHnr, "1", Rates { error_without_pct: 4.8, error_with_pct: 0.4, abstention_pct: 29.0 }),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].split('\t').count(), 7);
        assert_eq!(lines[1], "wild type vs lNR\t1\t-\t-\t0.4\t0.0\t5.4");
        assert_eq!(lines[2], "wild type vs hNR\t1\t-\t-\t4.8\t0.4\t29.0");
    }

    #[test]
    fn ks_statistic_cases() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_and_identical_classes() {
        let mut wells = toy_plate(7, 1);
        for w in &mut wells {
            w.mean_worm_intensity = 0.2;
            w.stripe_ratio = 0.3;
        }
        let d = intensity_histogram_diagnostic(&wells, 10);
        assert_eq!(d.classes.len(), 2);
        for c in &d.classes {
            assert_eq!(c.intensity_histogram.mass(), c.wells);
            assert_eq!(c.ratio_histogram.mass(), 7);
        }
        assert_eq!(d.classes[0].intensity_histogram, d.classes[1].intensity_histogram);
        assert_eq!(d.separation[0].intensity_ks, 0.0);
    }
}
