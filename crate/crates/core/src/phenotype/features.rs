use serde::{Deserialize, Serialize};

use super::Phenotype;
use crate::fluor::Blob;
use crate::imagecore::{GrayImage, Mask, Region};

/// Features of one connected worm region and the stripes inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPhenoFeatures {
    pub area: f64,
    pub eccentricity: f64,
    pub stripe_count: f64,
    pub stripe_area: f64,
    /// Stripe pixels inside the region over region area.
    pub ratio: f64,
    /// Stripe intensity quantiles over the median intensity of the region.
    pub stripe_q50: f64,
    pub stripe_q90: f64,
    /// Stripes per 1000 px² of region.
    pub patchiness: f64,
    /// Mean stripe boundary contrast over the median intensity of the region.
    pub boundary_contrast: f64,
}

pub const PHENO_FEATURE_NAMES: [&str; 9] = [
    "area",
    "eccentricity",
    "stripe_count",
    "stripe_area",
    "ratio",
    "stripe_q50",
    "stripe_q90",
    "patchiness",
    "boundary_contrast",
];

impl RegionPhenoFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.area,
            self.eccentricity,
            self.stripe_count,
            self.stripe_area,
            self.ratio,
            self.stripe_q50,
            self.stripe_q90,
            self.patchiness,
            self.boundary_contrast,
        ]
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1]
}

/// Features of `region` given the detected stripes of its image. Stripes
/// that do not touch the region are ignored; stripe intensity fields are 0
/// when none do. Intensities are relative to the region's median so that
/// per-well exposure cancels.
pub fn region_features(region: &Region, stripes: &[Blob], fl: &GrayImage) -> RegionPhenoFeatures {
    let area = region.area as f64;
    let mut body: Vec<f64> = region.pixels.iter().map(|&(x, y)| fl.get(x, y)).collect();
    body.sort_by(f64::total_cmp);
    let median = nearest_rank(&body, 0.5);
    let scale = if median > 1e-12 { 1.0 / median } else { 1.0 };
    let (l1, l2, _) = region.principal_axes();
    let eccentricity = (1.0 - l2 / l1).max(0.0).sqrt();
    let mut count = 0usize;
    let mut contrast = 0.0;
    let mut vals = Vec::new();
    for s in stripes {
        let inside: Vec<f64> = s
            .region
            .pixels
            .iter()
            .filter(|&&(x, y)| region.contains(x, y))
            .map(|&(x, y)| fl.get(x, y))
            .collect();
        if inside.is_empty() {
            continue;
        }
        count += 1;
        contrast += s.boundary_contrast;
        vals.extend(inside);
    }
    vals.sort_by(f64::total_cmp);
    let stripe_area = vals.len() as f64;
    let (q50, q90) = if vals.is_empty() {
        (0.0, 0.0)
    } else {
        (scale * nearest_rank(&vals, 0.5), scale * nearest_rank(&vals, 0.9))
    };
    RegionPhenoFeatures {
        area,
        eccentricity,
        stripe_count: count as f64,
        stripe_area,
        ratio: stripe_area / area,
        stripe_q50: q50,
        stripe_q90: q90,
        patchiness: 1000.0 * count as f64 / area,
        boundary_contrast: if count > 0 { scale * contrast / count as f64 } else { 0.0 },
    }
}

/// One well after segmentation and stripe detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedWell {
    pub well_id: String,
    pub known_label: Option<Phenotype>,
    pub regions: Vec<RegionPhenoFeatures>,
    /// Mean fluorescence over all segmented worm pixels; 0 without worms.
    pub mean_worm_intensity: f64,
    /// Stripe pixels inside worms over worm pixels; 0 without worms.
    pub stripe_ratio: f64,
}

pub fn process_well(
    well_id: &str,
    known_label: Option<Phenotype>,
    regions: &[Region],
    stripes: &[Blob],
    fl: &GrayImage,
) -> ProcessedWell {
    let (w, h) = fl.dims();
    let mut worm = Mask::new(w, h);
    for r in regions {
        for &(x, y) in &r.pixels {
            worm.set(x, y, true);
        }
    }
    let n = worm.count();
    let sum: f64 = fl.data().iter().zip(worm.bits()).filter(|p| *p.1).map(|p| *p.0).sum();
    let mut stripe_px = Mask::new(w, h);
    for s in stripes {
        for &(x, y) in &s.region.pixels {
            stripe_px.set(x, y, true);
        }
    }
    let inside = stripe_px.intersection_count(&worm);
    ProcessedWell {
        well_id: well_id.into(),
        known_label,
        regions: regions.iter().map(|r| region_features(r, stripes, fl)).collect(),
        mean_worm_intensity: if n > 0 { sum / n as f64 } else { 0.0 },
        stripe_ratio: if n > 0 { inside as f64 / n as f64 } else { 0.0 },
    }
}
