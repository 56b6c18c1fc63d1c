//! Quantiles of filter responses inside rotated rectangles.
//!
//! Pixel `(x, y)` has its center at the real coordinate `(x, y)`. A pixel
//! belongs to a rectangle when its center lies inside it (boundary inclusive,
//! with a `1e-9` slack so that exactly-representable edges are stable under
//! axis-aligned rotations).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GrayImage, ImageError};

pub const MEMBERSHIP_SLACK: f64 = 1e-9;

/// 1-based nearest rank of quantile `q` among `n` sorted values.
#[inline]
pub fn nearest_rank(q: f64, n: usize) -> usize {
    debug_assert!(n > 0);
    ((q * n as f64).ceil() as usize).clamp(1, n)
}

/// Reduce an angle into `[0, π)`.
#[inline]
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: (f64, f64),
    /// Direction of the long axis, radians in `[0, π)`.
    pub angle: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: (f64, f64), angle: f64, half_length: f64, half_width: f64) -> Result<Self, ImageError> {
        if !(half_length > 0.0 && half_width > 0.0) || !half_length.is_finite() || !half_width.is_finite() {
            return Err(ImageError::InvalidRect);
        }
        if !center.0.is_finite() || !center.1.is_finite() || !angle.is_finite() {
            return Err(ImageError::InvalidRect);
        }
        Ok(Self {
            center,
            angle: normalize_angle(angle),
            half_length,
            half_width,
        })
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let shape = RectShape::new(self.angle, self.half_length, self.half_width);
        shape.contains(x - self.center.0, y - self.center.1)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.angle.sin_cos();
        let (l, w) = (self.half_length, self.half_width);
        let (cx, cy) = self.center;
        [
            (cx + l * c - w * s, cy + l * s + w * c),
            (cx - l * c - w * s, cy - l * s + w * c),
            (cx - l * c + w * s, cy - l * s - w * c),
            (cx + l * c + w * s, cy + l * s - w * c),
        ]
    }
}

/// Rectangle geometry detached from position: tests points given relative
/// to the rectangle center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectShape {
    cos: f64,
    sin: f64,
    half_length: f64,
    half_width: f64,
}

impl RectShape {
    pub fn new(angle: f64, half_length: f64, half_width: f64) -> Self {
        let (sin, cos) = angle.sin_cos();
        Self {
            cos,
            sin,
            half_length,
            half_width,
        }
    }

    #[inline]
    pub fn contains(&self, dx: f64, dy: f64) -> bool {
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        u.abs() <= self.half_length + MEMBERSHIP_SLACK && v.abs() <= self.half_width + MEMBERSHIP_SLACK
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn extent(&self) -> (f64, f64) {
        let ex = self.half_length * self.cos.abs() + self.half_width * self.sin.abs();
        let ey = self.half_length * self.sin.abs() + self.half_width * self.cos.abs();
        (ex + MEMBERSHIP_SLACK, ey + MEMBERSHIP_SLACK)
    }
}

/// Visit each in-image pixel whose center lies in the rectangle of `shape`
/// centered at `anchor + offset`. Membership is evaluated on
/// `(pixel − anchor) − offset`, so callers sharing an anchor see identical
/// rounding regardless of where the anchor sits in the image.
pub fn for_each_pixel_in(
    width: usize,
    height: usize,
    anchor: (f64, f64),
    offset: (f64, f64),
    shape: &RectShape,
    mut f: impl FnMut(usize, usize),
) {
    let (ex, ey) = shape.extent();
    let cx = anchor.0 + offset.0;
    let cy = anchor.1 + offset.1;
    let x0 = (cx - ex).floor().max(0.0);
    let x1 = (cx + ex).ceil().min(width as f64 - 1.0);
    let y0 = (cy - ey).floor().max(0.0);
    let y1 = (cy + ey).ceil().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as usize..=y1 as usize {
        let ry = (y as f64 - anchor.1) - offset.1;
        for x in x0 as usize..=x1 as usize {
            let rx = (x as f64 - anchor.0) - offset.0;
            if shape.contains(rx, ry) {
                f(x, y);
            }
        }
    }
}

pub fn collect_rect_values(resp: &GrayImage, r: &OrientedRect) -> Vec<f64> {
    let shape = RectShape::new(r.angle, r.half_length, r.half_width);
    let mut out = Vec::new();
    for_each_pixel_in(resp.width(), resp.height(), r.center, (0.0, 0.0), &shape, |x, y| {
        out.push(resp.get(x, y))
    });
    out
}

/// Nearest-rank `q`-quantile of the values in `values` (reordered in place).
pub fn quantile_in_place(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = nearest_rank(q, values.len());
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    Some(*v)
}

pub fn rect_quantile(resp: &GrayImage, r: &OrientedRect, q: f64) -> Result<f64, ImageError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(ImageError::InvalidQuantile(q));
    }
    let mut vals = collect_rect_values(resp, r);
    quantile_in_place(&mut vals, q).ok_or(ImageError::EmptyRegion)
}
