//! Score thresholding, threshold calibration and mismatch metrics.

use serde::{Deserialize, Serialize};

use super::dense::ScoreImage;
use super::SegmenterError;
use crate::boosting::midpoint;
use crate::imagecore::{connected_components, Mask, Region};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub mask: Mask,
    pub regions: Vec<Region>,
    pub threshold: f64,
    pub model_id: String,
}

/// Worm mask `score > tau`, keeping only components of at least `min_area`
/// pixels.
pub fn threshold_segment(scores: &ScoreImage, tau: f64, min_area: usize) -> SegmentationResult {
    let raw = Mask::from_bits(
        scores.width,
        scores.height,
        scores.best_score.iter().map(|&s| s > tau).collect(),
    )
    .expect("score image dimensions are consistent");
    let regions: Vec<Region> = connected_components(&raw).into_iter().filter(|r| r.area >= min_area).collect();
    let mut mask = Mask::new(scores.width, scores.height);
    for r in &regions {
        for &(x, y) in &r.pixels {
            mask.set(x, y, true);
        }
    }
    SegmentationResult {
        mask,
        regions,
        threshold: tau,
        model_id: String::new(),
    }
}

/// Mismatch relative to ground-truth area, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub fp_pct: f64,
    pub fn_pct: f64,
    pub total_pct: f64,
}

/// Raw pixel counts behind [`SegmentationMetrics`]; these pool across images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchCounts {
    pub false_pos: usize,
    pub false_neg: usize,
    pub truth: usize,
}

impl MismatchCounts {
    pub fn of(mask: &Mask, truth: &Mask) -> Result<Self, SegmenterError> {
        if mask.dims() != truth.dims() {
            return Err(SegmenterError::DimensionMismatch);
        }
        let mut c = MismatchCounts::default();
        for (&m, &t) in mask.bits().iter().zip(truth.bits()) {
            c.truth += t as usize;
            c.false_pos += (m && !t) as usize;
            c.false_neg += (!m && t) as usize;
        }
        Ok(c)
    }

    pub fn add(&mut self, o: &MismatchCounts) {
        self.false_pos += o.false_pos;
        self.false_neg += o.false_neg;
        self.truth += o.truth;
    }

    pub fn metrics(&self) -> Result<SegmentationMetrics, SegmenterError> {
        if self.truth == 0 {
            return Err(SegmenterError::EmptyGroundTruth);
        }
        let t = self.truth as f64;
        let fp = 100.0 * self.false_pos as f64 / t;
        let fneg = 100.0 * self.false_neg as f64 / t;
        Ok(SegmentationMetrics {
            fp_pct: fp,
            fn_pct: fneg,
            total_pct: fp + fneg,
        })
    }
}

pub fn evaluate_segmentation(mask: &Mask, truth: &Mask) -> Result<SegmentationMetrics, SegmenterError> {
    MismatchCounts::of(mask, truth)?.metrics()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Pooled total mismatch at `threshold`, percent.
    pub total_pct: f64,
    /// Every `(tau, total_pct)` evaluated.
    pub candidates: Vec<(f64, f64)>,
}

fn pooled_total(pairs: &[(&ScoreImage, &Mask)], tau: f64, min_area: usize) -> Result<f64, SegmenterError> {
    let mut c = MismatchCounts::default();
    for (s, t) in pairs {
        c.add(&MismatchCounts::of(&threshold_segment(s, tau, min_area).mask, t)?);
    }
    Ok(c.metrics()?.total_pct)
}

/// Threshold minimizing pooled total mismatch over the training images.
///
/// Candidates are gap midpoints between consecutive distinct pooled scores:
/// one at each of `grid` evenly spaced score quantiles, plus the gap that is
/// optimal when the area filter is ignored (found exactly by a sorted sweep).
pub fn calibrate_threshold(
    pairs: &[(&ScoreImage, &Mask)],
    min_area: usize,
    grid: usize,
) -> Result<Calibration, SegmenterError> {
    if pairs.is_empty() {
        return Err(SegmenterError::Config("calibration needs at least one image".into()));
    }
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for (s, t) in pairs {
        if s.best_score.len() != t.bits().len() {
            return Err(SegmenterError::DimensionMismatch);
        }
        pooled.extend(s.best_score.iter().copied().zip(t.bits().iter().copied()));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let truth: usize = pooled.iter().filter(|p| p.1).count();
    if truth == 0 {
        return Err(SegmenterError::EmptyGroundTruth);
    }
    // Gap after sorted position i: tau between pooled[i].0 and the next larger value.
    let gap_after = |i: usize| -> f64 {
        let v = pooled[i].0;
        match pooled[i + 1..].iter().find(|p| p.0 > v) {
            Some(next) => midpoint(v, next.0),
            None => v,
        }
    };
    let mut taus = Vec::new();
    // Below everything.
    taus.push(pooled[0].0 - 1.0);
    for k in 1..grid {
        let i = ((k as f64 / grid as f64) * n as f64) as usize;
        taus.push(gap_after(i.min(n - 1)));
    }
    // Sweep: tau just above pooled[i] marks positions 0..=i negative.
    let (mut best_i, mut best_err) = (None, truth as f64);
    let (mut fn_count, mut fp_count) = (0usize, n - truth);
    let mut i = 0;
    while i < n {
        let v = pooled[i].0;
        while i < n && pooled[i].0 == v {
            if pooled[i].1 {
                fn_count += 1;
            } else {
                fp_count -= 1;
            }
            i += 1;
        }
        let err = (fn_count + fp_count) as f64;
        if err < best_err {
            best_err = err;
            best_i = Some(i - 1);
        }
    }
    if let Some(bi) = best_i {
        taus.push(gap_after(bi));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut candidates = Vec::with_capacity(taus.len());
    let mut best = (taus[0], f64::INFINITY);
    for tau in taus {
        let m = pooled_total(pairs, tau, min_area)?;
        candidates.push((tau, m));
        if m < best.1 {
            best = (tau, m);
        }
    }
    Ok(Calibration {
        threshold: best.0,
        total_pct: best.1,
        candidates,
    })
}
