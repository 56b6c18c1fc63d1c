use serde::{Deserialize, Serialize};

use super::features::ProcessedWell;
use super::Phenotype;

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin includes its upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn mass(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub class: Phenotype,
    pub wells: usize,
    pub intensity: Vec<f64>,
    pub stripe_ratio: Vec<f64>,
    pub intensity_histogram: Histogram,
    pub ratio_histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparation {
    pub class: Phenotype,
    /// KS distance to wild type.
    pub intensity_ks: f64,
    pub ratio_ks: f64,
}

/// Per-class distributions of mean in-worm fluorescence and of stripe ratio,
/// one value per well.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityDiagnostic {
    pub classes: Vec<ClassDistribution>,
    pub separation: Vec<ClassSeparation>,
}

fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

pub fn intensity_histogram_diagnostic(wells: &[ProcessedWell], bins: usize) -> IntensityDiagnostic {
    let (ilo, ihi) = span(wells.iter().map(|w| w.mean_worm_intensity));
    let (rlo, rhi) = span(wells.iter().map(|w| w.stripe_ratio));
    let classes: Vec<ClassDistribution> = Phenotype::ALL
        .into_iter()
        .filter_map(|class| {
            let mine: Vec<&ProcessedWell> = wells.iter().filter(|w| w.known_label == Some(class)).collect();
            if mine.is_empty() {
                return None;
            }
            let intensity: Vec<f64> = mine.iter().map(|w| w.mean_worm_intensity).collect();
            let stripe_ratio: Vec<f64> = mine.iter().map(|w| w.stripe_ratio).collect();
            Some(ClassDistribution {
                class,
                wells: mine.len(),
                intensity_histogram: Histogram::new(&intensity, ilo, ihi, bins),
                ratio_histogram: Histogram::new(&stripe_ratio, rlo, rhi, bins),
                intensity,
                stripe_ratio,
            })
        })
        .collect();
    let separation = match classes.iter().find(|c| c.class == Phenotype::Wt) {
        Some(wt) => classes
            .iter()
            .filter(|c| c.class != Phenotype::Wt)
            .map(|c| ClassSeparation {
                class: c.class,
                intensity_ks: ks_statistic(&wt.intensity, &c.intensity),
                ratio_ks: ks_statistic(&wt.stripe_ratio, &c.stripe_ratio),
            })
            .collect(),
        None => Vec::new(),
    };
    IntensityDiagnostic { classes, separation }
}
