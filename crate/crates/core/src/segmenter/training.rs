//! Training-set construction, hard-negative mining and the segmenter model.

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::annotation::{worm_union_mask, Point, WormAnnotation};
use super::dense::{dense_score, ScanGrid, ScoreImage};
use super::features::{segment_features, FeatureConfig, FeatureLayout, FeatureStack, WormSegment};
use super::threshold::{calibrate_threshold, threshold_segment, SegmentationResult};
use super::SegmenterError;
use crate::boosting::{train_adaboost, AdaBoostConfig, Label, LabeledExample, StumpEnsemble};
use crate::imagecore::{GrayImage, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub features: FeatureConfig,
    pub layout: FeatureLayout,
    pub angle_step_deg: f64,
    pub scan_lengths: Vec<f64>,
    pub min_length: f64,
    pub max_length: f64,
    pub positive_spacing: f64,
    pub negatives_per_image: usize,
    /// Random negatives and mined candidates must be this far outside worms.
    pub negative_exclusion_px: usize,
    pub boost: AdaBoostConfig,
    pub mining_rounds: usize,
    pub mining_top_m: usize,
    pub nms_radius: f64,
    pub min_region_area: usize,
    pub calibration_grid: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            layout: FeatureLayout::default(),
            angle_step_deg: 30.0,
            scan_lengths: vec![10.0, 16.0, 22.0, 28.0],
            min_length: 10.0,
            max_length: 30.0,
            positive_spacing: 3.0,
            negatives_per_image: 400,
            negative_exclusion_px: 3,
            boost: AdaBoostConfig::with_rounds(200),
            mining_rounds: 3,
            mining_top_m: 150,
            nms_radius: 5.0,
            min_region_area: 30,
            calibration_grid: 64,
        }
    }
}

impl SegmenterConfig {
    pub fn grid(&self) -> Result<ScanGrid, SegmenterError> {
        ScanGrid::new(self.angle_step_deg, self.scan_lengths.clone())
    }

    pub fn validate(&self) -> Result<(), SegmenterError> {
        self.grid()?;
        self.layout.validate(&self.scan_lengths)?;
        if !(self.min_length > 0.0 && self.min_length <= self.max_length) {
            return Err(SegmenterError::Config("need 0 < min_length <= max_length".into()));
        }
        if !(self.positive_spacing > 0.0) {
            return Err(SegmenterError::Config("positive spacing must be positive".into()));
        }
        Ok(())
    }
}

/// A trained worm detector: scoring model plus threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterModel {
    pub config: SegmenterConfig,
    pub ensemble: StumpEnsemble,
    pub threshold: f64,
}

impl SegmenterModel {
    pub fn feature_stack(&self, img: &GrayImage) -> Result<FeatureStack, SegmenterError> {
        FeatureStack::new(img, &self.config.features)
    }

    pub fn score(&self, stack: &FeatureStack) -> Result<ScoreImage, SegmenterError> {
        dense_score(stack, &self.config.layout, &self.config.grid()?, &self.ensemble)
    }

    pub fn segment_scores(&self, scores: &ScoreImage) -> SegmentationResult {
        threshold_segment(scores, self.threshold, self.config.min_region_area)
    }
}

fn sub(a: Point, b: Point) -> Point {
    (a.0 - b.0, a.1 - b.1)
}

fn cross(a: Point, b: Point) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Signed distance `u` along `n` to the nearest crossing of the line
/// `p + u n` with `poly`.
fn nearest_crossing(poly: &[Point], p: Point, n: Point) -> Option<f64> {
    let mut best: Option<f64> = None;
    for w in poly.windows(2) {
        let d = sub(w[1], w[0]);
        let denom = cross(n, d);
        if denom.abs() < 1e-12 {
            continue;
        }
        let ap = sub(w[0], p);
        let u = cross(ap, d) / denom;
        let v = cross(ap, n) / denom;
        if (0.0..=1.0).contains(&v) && best.is_none_or(|b| u.abs() < b.abs()) {
            best = Some(u);
        }
    }
    best
}

/// Positive segments every `spacing` px of midline arclength, centered on
/// the midline, oriented along its normal, and spanning the two sides.
/// Returns the segments and the number of samples skipped because the
/// normal did not cross both sides.
pub fn generate_positives(
    ann: &WormAnnotation,
    spacing: f64,
    min_length: f64,
    max_length: f64,
) -> Result<(Vec<WormSegment>, usize), SegmenterError> {
    ann.validate()?;
    let pieces: Vec<(Point, Point, f64)> = ann
        .midline
        .windows(2)
        .map(|w| {
            let d = sub(w[1], w[0]);
            (w[0], d, (d.0 * d.0 + d.1 * d.1).sqrt())
        })
        .filter(|p| p.2 > 0.0)
        .collect();
    let total: f64 = pieces.iter().map(|p| p.2).sum();
    let count = (total / spacing).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut skipped = 0;
    let mut piece = 0;
    let mut start = 0.0;
    for k in 0..count {
        let s = k as f64 * spacing;
        while piece + 1 < pieces.len() && start + pieces[piece].2 < s {
            start += pieces[piece].2;
            piece += 1;
        }
        let (a, d, len) = pieces[piece];
        let t = ((s - start) / len).clamp(0.0, 1.0);
        let p = (a.0 + t * d.0, a.1 + t * d.1);
        let n = (-d.1 / len, d.0 / len);
        match (nearest_crossing(&ann.side_a, p, n), nearest_crossing(&ann.side_b, p, n)) {
            (Some(ua), Some(ub)) if ua * ub < 0.0 => {
                let length = (ua.abs() + ub.abs()).clamp(min_length, max_length);
                out.push(WormSegment::new(p, n.1.atan2(n.0), length));
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("worm {}: skipped {skipped} of {count} positive samples", ann.worm_id);
    }
    Ok((out, skipped))
}

/// `n` uniformly random segments whose centers avoid the dilated worms.
pub fn generate_random_negatives(
    width: usize,
    height: usize,
    worms: &[WormAnnotation],
    n: usize,
    cfg: &SegmenterConfig,
    seed: u64,
) -> Result<Vec<WormSegment>, SegmenterError> {
    if n == 0 {
        return Err(SegmenterError::Config("need at least one negative".into()));
    }
    let forbidden = worm_union_mask(worms, width, height, cfg.negative_exclusion_px);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_attempts = 1000 * n;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= max_attempts {
            return Err(SegmenterError::TooManyRejections { attempts });
        }
        attempts += 1;
        let x = rng.random_range(0.0..=(width - 1) as f64);
        let y = rng.random_range(0.0..=(height - 1) as f64);
        let angle = rng.random_range(0.0..PI);
        let length = rng.random_range(cfg.min_length..=cfg.max_length);
        if forbidden.get(x.round() as usize, y.round() as usize) {
            continue;
        }
        out.push(WormSegment::new((x, y), angle, length));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedNegative {
    pub segment: WormSegment,
    pub score: f64,
}

/// The `top_m` highest-scoring pixels outside `excluded`, taking each
/// pixel's best segment, with greedy non-maximum suppression: a candidate
/// within `nms_radius` of an already chosen one is skipped. Ties in score go
/// to raster order.
pub fn hard_negative_mine(scores: &ScoreImage, excluded: &Mask, top_m: usize, nms_radius: f64) -> Vec<MinedNegative> {
    let w = scores.width;
    let mut idx: Vec<usize> = (0..scores.best_score.len()).filter(|&i| !excluded.bits()[i]).collect();
    idx.sort_by(|&a, &b| scores.best_score[b].total_cmp(&scores.best_score[a]).then(a.cmp(&b)));
    let r2 = nms_radius * nms_radius;
    let mut out: Vec<MinedNegative> = Vec::with_capacity(top_m);
    for i in idx {
        if out.len() >= top_m {
            break;
        }
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let suppressed = out.iter().any(|m| {
            let dx = m.segment.center.0 - x;
            let dy = m.segment.center.1 - y;
            dx * dx + dy * dy <= r2
        });
        if !suppressed {
            out.push(MinedNegative {
                segment: scores.segment_at(i % w, i / w),
                score: scores.best_score[i],
            });
        }
    }
    out
}

/// One annotated training image.
pub struct TrainingImage {
    pub id: String,
    pub stack: FeatureStack,
    pub worms: Vec<WormAnnotation>,
}

impl TrainingImage {
    pub fn truth(&self) -> Mask {
        worm_union_mask(&self.worms, self.stack.width(), self.stack.height(), 0)
    }

    pub fn exclusion(&self, cfg: &SegmenterConfig) -> Mask {
        worm_union_mask(&self.worms, self.stack.width(), self.stack.height(), cfg.negative_exclusion_px)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRound {
    pub round: usize,
    pub positives: usize,
    pub negatives: usize,
    pub mined_added: usize,
    pub train_mismatch_pct: f64,
    pub model: SegmenterModel,
}

fn examples_for(
    stack: &FeatureStack,
    layout: &FeatureLayout,
    segs: &[WormSegment],
    label: Label,
) -> Result<Vec<LabeledExample>, SegmenterError> {
    segs.par_iter()
        .filter(|s| {
            let (x, y) = s.center;
            x >= 0.0 && y >= 0.0 && x <= (stack.width() - 1) as f64 && y <= (stack.height() - 1) as f64
        })
        .map(|s| Ok(LabeledExample::new(segment_features(stack, layout, s)?, label)))
        .collect()
}

/// Train a detector and refine it with `cfg.mining_rounds` rounds of hard
/// negatives. Each round retrains from scratch on all examples gathered so
/// far. Returns the model after every round, starting with round 0 (random
/// negatives only).
pub fn train_segmenter(images: &[TrainingImage], cfg: &SegmenterConfig) -> Result<Vec<TrainingRound>, SegmenterError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(SegmenterError::NoPositives);
    }
    let names = cfg.layout.feature_names(&images[0].stack.channel_names());
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (k, im) in images.iter().enumerate() {
        let mut segs = Vec::new();
        for w in &im.worms {
            segs.extend(generate_positives(w, cfg.positive_spacing, cfg.min_length, cfg.max_length)?.0);
        }
        positives.extend(examples_for(&im.stack, &cfg.layout, &segs, Label::Positive)?);
        let seed = cfg.boost.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1));
        let neg = generate_random_negatives(
            im.stack.width(),
            im.stack.height(),
            &im.worms,
            cfg.negatives_per_image,
            cfg,
            seed,
        )?;
        negatives.extend(examples_for(&im.stack, &cfg.layout, &neg, Label::Negative)?);
    }
    if positives.is_empty() {
        return Err(SegmenterError::NoPositives);
    }
    let truths: Vec<Mask> = images.iter().map(|im| im.truth()).collect();
    let exclusions: Vec<Mask> = images.iter().map(|im| im.exclusion(cfg)).collect();
    let grid = cfg.grid()?;
    let mut rounds = Vec::new();
    let mut mined_added = 0;
    for round in 0..=cfg.mining_rounds {
        let mut examples = positives.clone();
        examples.extend(negatives.iter().cloned());
        info!(
            "segmenter round {round}: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        );
        let ensemble = train_adaboost(&examples, &cfg.boost)?.with_feature_names(names.clone());
        let scores: Vec<ScoreImage> = images
            .iter()
            .map(|im| dense_score(&im.stack, &cfg.layout, &grid, &ensemble))
            .collect::<Result<_, _>>()?;
        let pairs: Vec<(&ScoreImage, &Mask)> = scores.iter().zip(&truths).collect();
        let cal = calibrate_threshold(&pairs, cfg.min_region_area, cfg.calibration_grid)?;
        debug!("round {round}: threshold {} train mismatch {:.2}%", cal.threshold, cal.total_pct);
        rounds.push(TrainingRound {
            round,
            positives: positives.len(),
            negatives: negatives.len(),
            mined_added,
            train_mismatch_pct: cal.total_pct,
            model: SegmenterModel {
                config: cfg.clone(),
                ensemble: ensemble.clone(),
                threshold: cal.threshold,
            },
        });
        if round == cfg.mining_rounds {
            break;
        }
        mined_added = 0;
        for (k, im) in images.iter().enumerate() {
            let mined = hard_negative_mine(&scores[k], &exclusions[k], cfg.mining_top_m, cfg.nms_radius);
            let segs: Vec<WormSegment> = mined.iter().map(|m| m.segment).collect();
            mined_added += segs.len();
            negatives.extend(examples_for(&im.stack, &cfg.layout, &segs, Label::Negative)?);
        }
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::annotation::distance_to_polyline;

    fn straight(y: f64, x0: f64, x1: f64, hw: f64) -> WormAnnotation {
        WormAnnotation {
            worm_id: 1,
            image_id: "img".into(),
            midline: vec![(x0, y), (x1, y)],
            side_a: vec![(x0, y - hw), (x1, y - hw)],
            side_b: vec![(x0, y + hw), (x1, y + hw)],
        }
    }

    #[test]
    fn straight_worm_positives() {
        let w = straight(30.0, 10.0, 70.0, 7.0);
        let (segs, skipped) = generate_positives(&w, 3.0, 10.0, 30.0).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(segs.len(), (60.0f64 / 3.0).floor() as usize + 1);
        for s in &segs {
            assert!((s.angle - PI / 2.0).abs() < 1e-12);
            assert!((s.length - 14.0).abs() < 1e-12);
            assert_eq!(s.center.1, 30.0);
        }
    }

    #[test]
    fn curved_worm_endpoints_on_sides() {
        // Sinusoidal worm with sides offset along the normal.
        let mid: Vec<Point> = (0..=60).map(|i| (10.0 + i as f64, 40.0 + 6.0 * (i as f64 / 12.0).sin())).collect();
        let off = |sign: f64| -> Vec<Point> {
            (0..mid.len())
                .map(|i| {
                    let a = mid[i.saturating_sub(1)];
                    let b = mid[(i + 1).min(mid.len() - 1)];
                    let d = sub(b, a);
                    let l = (d.0 * d.0 + d.1 * d.1).sqrt();
                    (mid[i].0 - sign * 6.0 * d.1 / l, mid[i].1 + sign * 6.0 * d.0 / l)
                })
                .collect()
        };
        let w = WormAnnotation {
            worm_id: 2,
            image_id: "img".into(),
            midline: mid.clone(),
            side_a: off(1.0),
            side_b: off(-1.0),
        };
        let (segs, _) = generate_positives(&w, 3.0, 10.0, 30.0).unwrap();
        assert!(segs.len() > 15);
        for s in &segs {
            let (p, q) = s.endpoints();
            let da = distance_to_polyline(&w.side_a, p).min(distance_to_polyline(&w.side_a, q));
            let db = distance_to_polyline(&w.side_b, p).min(distance_to_polyline(&w.side_b, q));
            assert!(da <= 1.0 && db <= 1.0, "{da} {db}");
        }
    }

    #[test]
    fn negatives_avoid_worms_and_are_reproducible() {
        let worms = vec![straight(30.0, 10.0, 70.0, 7.0)];
        let cfg = SegmenterConfig::default();
        let a = generate_random_negatives(80, 60, &worms, 200, &cfg, 5).unwrap();
        let b = generate_random_negatives(80, 60, &worms, 200, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let poly = worms[0].polygon();
        for s in &a {
            assert!(!crate::segmenter::annotation::point_in_polygon(&poly, s.center));
            assert!((10.0..=30.0).contains(&s.length));
        }
        let none = generate_random_negatives(80, 60, &[], 50, &cfg, 6).unwrap();
        assert_eq!(none.len(), 50);
    }

    #[test]
    fn all_worm_image_rejected() {
        let worms = vec![straight(10.0, -5.0, 30.0, 12.0)];
        let err = generate_random_negatives(20, 20, &worms, 5, &SegmenterConfig::default(), 1).unwrap_err();
        assert!(matches!(err, SegmenterError::TooManyRejections { .. }));
    }

    #[test]
    fn zero_model_mining_uses_scan_order() {
        let scores = ScoreImage {
            width: 30,
            height: 20,
            best_score: vec![0.0; 600],
            best_angle: vec![0; 600],
            best_length: vec![0; 600],
            grid: ScanGrid::new(30.0, vec![10.0]).unwrap(),
        };
        let mined = hard_negative_mine(&scores, &Mask::new(30, 20), 8, 5.0);
        assert_eq!(mined.len(), 8);
        assert_eq!(mined[0].segment.center, (0.0, 0.0));
        assert_eq!(mined[1].segment.center, (6.0, 0.0));
    }
}
