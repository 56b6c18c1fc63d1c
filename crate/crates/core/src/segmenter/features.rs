//! Quantized filter channels and oriented-segment features.
//!
//! Every filter response is stored as 8-bit levels over a fixed range per
//! channel kind. Features are computed from the dequantized values, which is
//! what lets the dense scan evaluate stumps by counting levels instead of
//! sorting.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SegmenterError;
use crate::boosting::EMPTY_REGION_SENTINEL;
use crate::imagecore::{
    filter_bank, for_each_pixel_in, nearest_rank, normalize_angle, ChannelKind, FilterBankConfig, GrayImage,
    RectShape,
};

/// Highest level a pixel can take; `PAD_LEVEL` marks out-of-image samples.
pub const MAX_LEVEL: u8 = 254;
pub const PAD_LEVEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizationConfig {
    pub intensity: QuantRange,
    pub gradient: QuantRange,
    pub laplacian: QuantRange,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        Self {
            intensity: QuantRange { lo: 0.0, hi: 1.0 },
            gradient: QuantRange { lo: 0.0, hi: 0.5 },
            laplacian: QuantRange { lo: -0.25, hi: 0.25 },
        }
    }
}

impl QuantizationConfig {
    pub fn range(&self, kind: ChannelKind) -> QuantRange {
        match kind {
            ChannelKind::Intensity => self.intensity,
            ChannelKind::Gradient => self.gradient,
            ChannelKind::Laplacian => self.laplacian,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub filter_bank: FilterBankConfig,
    pub quantization: QuantizationConfig,
}

#[derive(Clone, Debug)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
    pub lo: f64,
    pub step: f64,
    pub levels: Vec<u8>,
}

impl Channel {
    #[inline]
    pub fn dequant(&self, level: u8) -> f64 {
        self.lo + level as f64 * self.step
    }

    pub fn quantize(&self, v: f64) -> u8 {
        ((v - self.lo) / self.step).round().clamp(0.0, MAX_LEVEL as f64) as u8
    }

    /// Smallest level whose dequantized value is `>= t`, or `PAD_LEVEL`
    /// when every level lies below `t`. For any level `l`,
    /// `dequant(l) < t` exactly when `l < level_threshold(t)`.
    pub fn level_threshold(&self, t: f64) -> u8 {
        (0..=MAX_LEVEL).find(|&l| self.dequant(l) >= t).unwrap_or(PAD_LEVEL)
    }
}

/// Quantized filter-bank responses of one brightfield image.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    pub channels: Vec<Channel>,
}

impl FeatureStack {
    pub fn new(img: &GrayImage, cfg: &FeatureConfig) -> Result<Self, SegmenterError> {
        let bank = filter_bank(img, &cfg.filter_bank)?;
        let channels = bank
            .responses
            .into_iter()
            .map(|r| {
                let range = cfg.quantization.range(r.kind);
                let mut ch = Channel {
                    name: r.name,
                    kind: r.kind,
                    lo: range.lo,
                    step: (range.hi - range.lo) / MAX_LEVEL as f64,
                    levels: Vec::new(),
                };
                ch.levels = r.image.data().iter().map(|&v| ch.quantize(v)).collect();
                ch
            })
            .collect();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    /// Dequantized response of channel `c`.
    pub fn channel_image(&self, c: usize) -> GrayImage {
        let ch = &self.channels[c];
        GrayImage::new(self.width, self.height, ch.levels.iter().map(|&l| ch.dequant(l)).collect())
            .expect("channel dimensions are those of the source image")
    }
}

/// `base + per_length * L` for segment length `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub base: f64,
    #[serde(default)]
    pub per_length: f64,
}

impl Linear {
    pub const fn new(base: f64, per_length: f64) -> Self {
        Self { base, per_length }
    }

    #[inline]
    pub fn at(&self, length: f64) -> f64 {
        self.base + self.per_length * length
    }
}

/// A measurement rectangle placed relative to a segment: its center is
/// offset `along` the segment direction and `normal` to it, and its long
/// axis is parallel to the segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    pub name: String,
    pub along: Linear,
    pub normal: Linear,
    pub half_length: Linear,
    pub half_width: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureLayout {
    pub rects: Vec<RectSpec>,
    pub quantiles: Vec<f64>,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        let r = |name: &str, along, normal, hl, hw| RectSpec {
            name: name.into(),
            along,
            normal,
            half_length: hl,
            half_width: hw,
        };
        let zero = Linear::new(0.0, 0.0);
        let half = Linear::new(0.0, 0.5);
        let four = Linear::new(4.0, 0.0);
        Self {
            rects: vec![
                r("on", zero, zero, half, four),
                r("end_a", Linear::new(4.0, 0.5), zero, four, four),
                r("end_b", Linear::new(-4.0, -0.5), zero, four, four),
                r("side_a", zero, Linear::new(8.0, 0.0), half, four),
                r("side_b", zero, Linear::new(-8.0, 0.0), half, four),
            ],
            quantiles: vec![0.1, 0.5, 0.9],
        }
    }
}

impl FeatureLayout {
    pub fn validate(&self, lengths: &[f64]) -> Result<(), SegmenterError> {
        if self.rects.is_empty() || self.quantiles.is_empty() {
            return Err(SegmenterError::Config("layout needs at least one rectangle and quantile".into()));
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(SegmenterError::Config(format!("quantile {q} outside [0, 1]")));
        }
        for r in &self.rects {
            for &l in lengths {
                let (hl, hw) = (r.half_length.at(l), r.half_width.at(l));
                if !(hl > 0.0 && hw > 0.0 && hl.is_finite() && hw.is_finite()) {
                    return Err(SegmenterError::Config(format!(
                        "rectangle {} has non-positive extent at length {l}",
                        r.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Offset of the rectangle center from the segment center, and its shape.
    pub fn rect_geometry(&self, r: usize, angle: f64, length: f64) -> ((f64, f64), RectShape) {
        let spec = &self.rects[r];
        let (s, c) = angle.sin_cos();
        let a = spec.along.at(length);
        let n = spec.normal.at(length);
        let offset = (a * c - n * s, a * s + n * c);
        let shape = RectShape::new(angle, spec.half_length.at(length), spec.half_width.at(length));
        (offset, shape)
    }

    pub fn dimensionality(&self, channels: usize) -> usize {
        channels * self.rects.len() * self.quantiles.len()
    }

    /// Index of feature `(channel, rect, quantile)` in a feature vector.
    #[inline]
    pub fn feature_index(&self, channel: usize, rect: usize, quantile: usize) -> usize {
        (channel * self.rects.len() + rect) * self.quantiles.len() + quantile
    }

    /// Inverse of [`feature_index`](Self::feature_index).
    pub fn decompose(&self, index: usize) -> (usize, usize, usize) {
        let q = index % self.quantiles.len();
        let cr = index / self.quantiles.len();
        (cr / self.rects.len(), cr % self.rects.len(), q)
    }

    pub fn feature_names(&self, channel_names: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dimensionality(channel_names.len()));
        for c in channel_names {
            for r in &self.rects {
                for q in &self.quantiles {
                    out.push(format!("{c}/{}/q{q}", r.name));
                }
            }
        }
        out
    }
}

/// A short line segment across a worm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WormSegment {
    pub center: (f64, f64),
    /// Direction of the segment, radians in `[0, π)`.
    pub angle: f64,
    pub length: f64,
}

impl WormSegment {
    pub fn new(center: (f64, f64), angle: f64, length: f64) -> Self {
        Self {
            center,
            angle: normalize_angle(angle),
            length,
        }
    }

    pub fn endpoints(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.angle.sin_cos();
        let h = self.length / 2.0;
        (
            (self.center.0 - h * c, self.center.1 - h * s),
            (self.center.0 + h * c, self.center.1 + h * s),
        )
    }
}

/// Feature vector of `seg`: for each channel, rectangle and quantile, the
/// nearest-rank quantile of the channel inside the rectangle, or the empty
/// sentinel when the rectangle misses the image.
pub fn segment_features(
    stack: &FeatureStack,
    layout: &FeatureLayout,
    seg: &WormSegment,
) -> Result<Vec<f64>, SegmenterError> {
    let (w, h) = (stack.width, stack.height);
    let (cx, cy) = seg.center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= (w - 1) as f64 && cy <= (h - 1) as f64) {
        return Err(SegmenterError::OutsideImage { x: cx, y: cy });
    }
    let mut out = vec![0.0; layout.dimensionality(stack.channels.len())];
    let mut pixels = Vec::new();
    let mut hist = [0u32; 256];
    for r in 0..layout.rects.len() {
        let (offset, shape) = layout.rect_geometry(r, seg.angle, seg.length);
        pixels.clear();
        for_each_pixel_in(w, h, seg.center, offset, &shape, |x, y| pixels.push(y * w + x));
        for (c, ch) in stack.channels.iter().enumerate() {
            if pixels.is_empty() {
                for qi in 0..layout.quantiles.len() {
                    out[layout.feature_index(c, r, qi)] = EMPTY_REGION_SENTINEL;
                }
                continue;
            }
            hist.fill(0);
            for &p in &pixels {
                hist[ch.levels[p] as usize] += 1;
            }
            for (qi, &q) in layout.quantiles.iter().enumerate() {
                let k = nearest_rank(q, pixels.len()) as u32;
                let mut acc = 0;
                let mut level = 0;
                for (l, &n) in hist.iter().enumerate() {
                    acc += n;
                    if acc >= k {
                        level = l;
                        break;
                    }
                }
                out[layout.feature_index(c, r, qi)] = ch.dequant(level as u8);
            }
        }
    }
    Ok(out)
}

/// Angles of the dense-scan grid: `0, step, 2·step, …` below π.
pub fn angle_grid(angle_step_deg: f64) -> Result<Vec<f64>, SegmenterError> {
    let n = 180.0 / angle_step_deg;
    if !(angle_step_deg > 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(SegmenterError::Config(format!("angle step {angle_step_deg}° must divide 180°")));
    }
    let n = n.round() as usize;
    Ok((0..n).map(|a| PI * a as f64 / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{collect_rect_values, quantile_in_place, OrientedRect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0.2..0.8))
    }

    #[test]
    fn constant_image_gives_channel_constants() {
        let img = GrayImage::filled(40, 40, 0.37);
        let stack = FeatureStack::new(&img, &FeatureConfig::default()).unwrap();
        let layout = FeatureLayout::default();
        let f = segment_features(&stack, &layout, &WormSegment::new((20.0, 20.0), 0.4, 16.0)).unwrap();
        for (c, ch) in stack.channels.iter().enumerate() {
            let expected = ch.dequant(ch.levels[0]);
            for r in 0..layout.rects.len() {
                for q in 0..layout.quantiles.len() {
                    assert_eq!(f[layout.feature_index(c, r, q)], expected, "{}", ch.name);
                }
            }
        }
    }

    #[test]
    fn default_dimensionality() {
        let img = noise(32, 32, 1);
        let stack = FeatureStack::new(&img, &FeatureConfig::default()).unwrap();
        let layout = FeatureLayout::default();
        let f = segment_features(&stack, &layout, &WormSegment::new((10.0, 10.0), 0.0, 10.0)).unwrap();
        assert_eq!(f.len(), 7 * 5 * 3);
        assert_eq!(layout.feature_names(&stack.channel_names()).len(), 105);
        assert_eq!(layout.feature_names(&stack.channel_names())[0], "raw/on/q0.1");
        assert_eq!(layout.decompose(layout.feature_index(3, 2, 1)), (3, 2, 1));
    }

    #[test]
    fn matches_sorting_oracle_on_dequantized_channels() {
        let img = noise(48, 40, 2);
        let stack = FeatureStack::new(&img, &FeatureConfig::default()).unwrap();
        let layout = FeatureLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let images: Vec<GrayImage> = (0..stack.channels.len()).map(|c| stack.channel_image(c)).collect();
        for _ in 0..40 {
            let seg = WormSegment::new(
                (rng.random_range(0.0..47.0), rng.random_range(0.0..39.0)),
                rng.random_range(0.0..PI),
                rng.random_range(10.0..30.0),
            );
            let f = segment_features(&stack, &layout, &seg).unwrap();
            for r in 0..layout.rects.len() {
                let (off, _) = layout.rect_geometry(r, seg.angle, seg.length);
                let spec = &layout.rects[r];
                let rect = OrientedRect::new(
                    (seg.center.0 + off.0, seg.center.1 + off.1),
                    seg.angle,
                    spec.half_length.at(seg.length),
                    spec.half_width.at(seg.length),
                )
                .unwrap();
                for (c, im) in images.iter().enumerate() {
                    let vals = collect_rect_values(im, &rect);
                    for (qi, &q) in layout.quantiles.iter().enumerate() {
                        let want = quantile_in_place(&mut vals.clone(), q).unwrap_or(EMPTY_REGION_SENTINEL);
                        // Centers are off-grid here, so membership can differ from the anchored path
                        // only on exact boundary ties; those have probability zero for random input.
                        assert_eq!(f[layout.feature_index(c, r, qi)], want);
                    }
                }
            }
        }
    }

    #[test]
    fn rectangles_off_image_use_sentinel() {
        let img = noise(20, 20, 4);
        let stack = FeatureStack::new(&img, &FeatureConfig::default()).unwrap();
        let layout = FeatureLayout::default();
        // Horizontal segment at the left edge: end_b sits at x = -(5 + 4) ± 4.
        let f = segment_features(&stack, &layout, &WormSegment::new((0.0, 10.0), 0.0, 10.0)).unwrap();
        assert_eq!(f[layout.feature_index(0, 2, 0)], EMPTY_REGION_SENTINEL);
        assert_ne!(f[layout.feature_index(0, 1, 0)], EMPTY_REGION_SENTINEL);
        assert!(segment_features(&stack, &layout, &WormSegment::new((-1.0, 10.0), 0.0, 10.0)).is_err());
    }

    #[test]
    fn quarter_turn_preserves_on_segment_features() {
        let n = 41;
        let img = noise(n, n, 5);
        // (x, y) -> (n-1-y, x): a 90° rotation of the square image.
        let rot = GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
        let cfg = FeatureConfig::default();
        let (s1, s2) = (FeatureStack::new(&img, &cfg).unwrap(), FeatureStack::new(&rot, &cfg).unwrap());
        let layout = FeatureLayout::default();
        let seg = WormSegment::new((18.0, 22.0), 0.0, 16.0);
        let (cx, cy) = seg.center;
        let seg_rot = WormSegment::new(((n - 1) as f64 - cy, cx), PI / 2.0, 16.0);
        let f1 = segment_features(&s1, &layout, &seg).unwrap();
        let f2 = segment_features(&s2, &layout, &seg_rot).unwrap();
        // Raw and rotation-invariant channels (raw, contrast, gauss, sobel magnitude, LoG).
        for c in 0..s1.channels.len() {
            for q in 0..layout.quantiles.len() {
                let i = layout.feature_index(c, 0, q);
                assert!((f1[i] - f2[i]).abs() <= s1.channels[c].step + 1e-12, "{}", s1.channels[c].name);
            }
        }
        for q in 0..layout.quantiles.len() {
            let i = layout.feature_index(0, 0, q);
            assert_eq!(f1[i], f2[i]);
        }
    }

    #[test]
    fn level_threshold_is_exact() {
        let img = noise(8, 8, 6);
        let stack = FeatureStack::new(&img, &FeatureConfig::default()).unwrap();
        let ch = &stack.channels[4];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let t = rng.random_range(-0.3..0.3);
            let lt = ch.level_threshold(t);
            for l in 0..=MAX_LEVEL {
                assert_eq!(ch.dequant(l) < t, l < lt);
            }
        }
    }

    #[test]
    fn angle_grid_default() {
        let g = angle_grid(30.0).unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[3] - PI / 2.0).abs() < 1e-15);
        assert!(angle_grid(25.0).is_err());
    }
}
