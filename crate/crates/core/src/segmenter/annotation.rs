use serde::{Deserialize, Serialize};

use super::SegmenterError;
use crate::imagecore::Mask;

pub type Point = (f64, f64);

/// Hand-drawn worm outline: a midline and the two sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WormAnnotation {
    pub worm_id: u32,
    pub image_id: String,
    pub midline: Vec<Point>,
    pub side_a: Vec<Point>,
    pub side_b: Vec<Point>,
}

/// All worm annotations for one image; the on-disk annotation file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotations {
    pub image_id: String,
    pub worms: Vec<WormAnnotation>,
}

impl ImageAnnotations {
    pub fn validate(&self) -> Result<(), SegmenterError> {
        for w in &self.worms {
            if w.image_id != self.image_id {
                return Err(SegmenterError::InvalidAnnotation {
                    worm_id: w.worm_id,
                    reason: format!("image id {:?} differs from file image id {:?}", w.image_id, self.image_id),
                });
            }
            w.validate()?;
        }
        Ok(())
    }
}

fn sub(a: Point, b: Point) -> Point {
    (a.0 - b.0, a.1 - b.1)
}

fn cross(a: Point, b: Point) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn dot(a: Point, b: Point) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// Closest point to `p` on the polyline.
pub fn nearest_on_polyline(poly: &[Point], p: Point) -> Point {
    let mut best = poly[0];
    let mut best_d = f64::INFINITY;
    for w in poly.windows(2) {
        let d = sub(w[1], w[0]);
        let len2 = dot(d, d);
        let t = if len2 > 0.0 { (dot(sub(p, w[0]), d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = (w[0].0 + t * d.0, w[0].1 + t * d.1);
        let e = sub(p, q);
        let dist = dot(e, e);
        if dist < best_d {
            best_d = dist;
            best = q;
        }
    }
    best
}

pub fn distance_to_polyline(poly: &[Point], p: Point) -> f64 {
    let q = nearest_on_polyline(poly, p);
    let e = sub(p, q);
    dot(e, e).sqrt()
}

pub fn polyline_length(poly: &[Point]) -> f64 {
    poly.windows(2).map(|w| dot(sub(w[1], w[0]), sub(w[1], w[0])).sqrt()).sum()
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl WormAnnotation {
    pub fn validate(&self) -> Result<(), SegmenterError> {
        let bad = |reason: String| SegmenterError::InvalidAnnotation {
            worm_id: self.worm_id,
            reason,
        };
        for (name, poly) in [("midline", &self.midline), ("side_a", &self.side_a), ("side_b", &self.side_b)] {
            if poly.len() < 2 {
                return Err(bad(format!("{name} needs at least 2 vertices")));
            }
            if poly.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                return Err(bad(format!("{name} has non-finite vertices")));
            }
        }
        let n = self.midline.len();
        for i in 0..n {
            let m = self.midline[i];
            let tangent = sub(self.midline[(i + 1).min(n - 1)], self.midline[i.saturating_sub(1)]);
            if dot(tangent, tangent) == 0.0 {
                return Err(bad(format!("midline vertex {i} has zero tangent")));
            }
            let a = cross(tangent, sub(nearest_on_polyline(&self.side_a, m), m));
            let b = cross(tangent, sub(nearest_on_polyline(&self.side_b, m), m));
            if !(a * b < 0.0) {
                return Err(bad(format!("midline vertex {i} is not between the sides")));
            }
        }
        Ok(())
    }

    /// Outline polygon: `side_a` followed by `side_b` reversed.
    pub fn polygon(&self) -> Vec<Point> {
        let mut p = self.side_a.clone();
        p.extend(self.side_b.iter().rev());
        p
    }

    /// Pixels whose centers fall inside the outline polygon.
    pub fn rasterize(&self, width: usize, height: usize) -> Mask {
        let poly = self.polygon();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &poly {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let mut m = Mask::new(width, height);
        if x1 < 0.0 || y1 < 0.0 {
            return m;
        }
        let xa = x0.floor().max(0.0) as usize;
        let ya = y0.floor().max(0.0) as usize;
        let xb = (x1.ceil().max(0.0) as usize).min(width.saturating_sub(1));
        let yb = (y1.ceil().max(0.0) as usize).min(height.saturating_sub(1));
        for y in ya..=yb {
            for x in xa..=xb {
                if point_in_polygon(&poly, (x as f64, y as f64)) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

/// Union of the rasterized worms, each dilated by `dilation` px.
pub fn worm_union_mask(worms: &[WormAnnotation], width: usize, height: usize, dilation: usize) -> Mask {
    let mut m = Mask::new(width, height);
    for w in worms {
        m.union_with(&w.rasterize(width, height));
    }
    if dilation > 0 {
        m.dilate(dilation)
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn straight_worm(y: f64, x0: f64, x1: f64, half_width: f64) -> WormAnnotation {
        WormAnnotation {
            worm_id: 1,
            image_id: "img".into(),
            midline: vec![(x0, y), ((x0 + x1) / 2.0, y), (x1, y)],
            side_a: vec![(x0, y - half_width), (x1, y - half_width)],
            side_b: vec![(x0, y + half_width), (x1, y + half_width)],
        }
    }

    #[test]
    fn straight_worm_is_valid_and_rasterizes() {
        let w = straight_worm(20.0, 10.0, 50.0, 7.0);
        w.validate().unwrap();
        let m = w.rasterize(64, 40);
        assert!(m.get(30, 20));
        assert!(!m.get(30, 5));
        // Rows 14..=26 strictly inside; the boundary rows 13 and 27 depend on the edge rule.
        for y in 14..=26 {
            assert!(m.get(30, y));
        }
    }

    #[test]
    fn sides_on_same_side_rejected() {
        let mut w = straight_worm(20.0, 10.0, 50.0, 7.0);
        w.side_b = vec![(10.0, 10.0), (50.0, 10.0)];
        assert!(w.validate().is_err());
        let mut w = straight_worm(20.0, 10.0, 50.0, 7.0);
        w.midline.truncate(1);
        assert!(w.validate().is_err());
    }

    #[test]
    fn polyline_helpers() {
        let p = vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)];
        assert_eq!(polyline_length(&p), 20.0);
        assert_eq!(distance_to_polyline(&p, (5.0, 3.0)), 3.0);
        assert_eq!(nearest_on_polyline(&p, (12.0, 5.0)), (10.0, 5.0));
    }

    #[test]
    fn annotation_json_round_trip() {
        let a = ImageAnnotations {
            image_id: "img".into(),
            worms: vec![straight_worm(20.0, 10.0, 50.0, 7.0)],
        };
        let text = serde_json::to_string(&a).unwrap();
        let back: ImageAnnotations = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        back.validate().unwrap();
    }
}
