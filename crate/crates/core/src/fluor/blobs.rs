use serde::{Deserialize, Serialize};

use crate::imagecore::{connected_components, laplacian_of_gaussian, GrayImage, Mask, Region};
use crate::segmenter::ScoreImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Response above `mean + k * std` of the whole response image.
    MeanPlusKSigma { k: f64 },
    Absolute { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobConfig {
    pub sigma: f64,
    pub rule: ThresholdRule,
    pub min_area: usize,
    /// Width of the outer ring used for boundary contrast, px.
    pub ring: usize,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            sigma: 2.5,
            rule: ThresholdRule::MeanPlusKSigma { k: 2.0 },
            min_area: 10,
            ring: 2,
        }
    }
}

/// A connected bright region of the fluorescence image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Index in detection order.
    pub id: usize,
    pub region: Region,
    /// Major over minor axis length, at least 1.
    pub elongation: f64,
    /// Major axis direction in `[0, π)`.
    pub orientation: f64,
    pub mean: f64,
    pub max: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub boundary_contrast: f64,
    /// Fraction of blob pixels inside the worm mask.
    pub worm_overlap: f64,
    /// `|cos|` between the blob axis and the local worm axis; 0 without
    /// worm scores.
    pub worm_alignment: f64,
    /// Longer over shorter bounding-box side.
    pub bbox_aspect: f64,
}

impl Blob {
    pub fn area(&self) -> usize {
        self.region.area
    }
}

/// Negated LoG, so bright blobs respond positively.
pub fn blob_response(fl: &GrayImage, sigma: f64) -> GrayImage {
    laplacian_of_gaussian(fl, sigma).map(|v| -v)
}

/// Pixels whose response exceeds the rule's threshold.
pub fn threshold_response(response: &GrayImage, rule: &ThresholdRule) -> Mask {
    let t = match *rule {
        ThresholdRule::Absolute { value } => value,
        ThresholdRule::MeanPlusKSigma { k } => {
            let d = response.data();
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                return Mask::new(response.width(), response.height());
            }
            mean + k * sd
        }
    };
    Mask::from_bits(response.width(), response.height(), response.data().iter().map(|&v| v > t).collect())
        .expect("same shape")
}

fn nearest_rank_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Featurize one region of the fluorescence image.
pub fn featurize(id: usize, region: Region, fl: &GrayImage, ring: usize, worm_mask: Option<&Mask>, scores: Option<&ScoreImage>) -> Blob {
    let (l1, l2, orientation) = region.principal_axes();
    let mut vals: Vec<f64> = region.pixels.iter().map(|&(x, y)| fl.get(x, y)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.sort_by(f64::total_cmp);
    let max = *vals.last().expect("non-empty region");

    let (w, h) = fl.dims();
    let bb = region.bbox;
    let (x0, y0) = (bb.x0.saturating_sub(ring), bb.y0.saturating_sub(ring));
    let (x1, y1) = ((bb.x1 + ring).min(w - 1), (bb.y1 + ring).min(h - 1));
    let (lw, lh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut local = Mask::new(lw, lh);
    for &(x, y) in &region.pixels {
        local.set(x - x0, y - y0, true);
    }
    let grown = local.dilate(ring);
    let (mut ring_sum, mut ring_n) = (0.0, 0usize);
    for ly in 0..lh {
        for lx in 0..lw {
            if grown.get(lx, ly) && !local.get(lx, ly) {
                ring_sum += fl.get(x0 + lx, y0 + ly);
                ring_n += 1;
            }
        }
    }
    let boundary_contrast = if ring_n > 0 { mean - ring_sum / ring_n as f64 } else { 0.0 };

    let worm_overlap = worm_mask.map_or(0.0, |m| {
        region.pixels.iter().filter(|&&(x, y)| m.get(x, y)).count() as f64 / region.area as f64
    });
    let worm_alignment = scores
        .and_then(|s| {
            region
                .pixels
                .iter()
                .filter(|&&(x, y)| worm_mask.is_none_or(|m| m.get(x, y)))
                .max_by(|a, b| s.score(a.0, a.1).total_cmp(&s.score(b.0, b.1)))
                .map(|&(x, y)| (orientation - s.angle_at(x, y)).sin().abs())
        })
        .unwrap_or(0.0);
    let (bw, bh) = (bb.width() as f64, bb.height() as f64);
    Blob {
        id,
        elongation: (l1 / l2).sqrt().max(1.0),
        orientation,
        mean,
        max,
        q10: nearest_rank_sorted(&vals, 0.1),
        q50: nearest_rank_sorted(&vals, 0.5),
        q90: nearest_rank_sorted(&vals, 0.9),
        boundary_contrast,
        worm_overlap,
        worm_alignment,
        bbox_aspect: bw.max(bh) / bw.min(bh),
        region,
    }
}

/// LoG filter, threshold, connected components, size filter, featurize.
pub fn detect_blobs(fl: &GrayImage, cfg: &BlobConfig, worm_mask: Option<&Mask>, scores: Option<&ScoreImage>) -> Vec<Blob> {
    let mask = threshold_response(&blob_response(fl, cfg.sigma), &cfg.rule);
    connected_components(&mask)
        .into_iter()
        .filter(|r| r.area >= cfg.min_area.max(1))
        .enumerate()
        .map(|(i, r)| featurize(i, r, fl, cfg.ring, worm_mask, scores))
        .collect()
}

pub const BLOB_FEATURE_NAMES: [&str; 11] = [
    "area",
    "elongation",
    "worm_alignment",
    "mean",
    "max",
    "q10",
    "q50",
    "q90",
    "boundary_contrast",
    "worm_overlap",
    "bbox_aspect",
];

/// Classifier input; position and bounding-box placement are left out.
pub fn blob_features(b: &Blob) -> Vec<f64> {
    vec![
        b.region.area as f64,
        b.elongation,
        b.worm_alignment,
        b.mean,
        b.max,
        b.q10,
        b.q50,
        b.q90,
        b.boundary_contrast,
        b.worm_overlap,
        b.bbox_aspect,
    ]
}
