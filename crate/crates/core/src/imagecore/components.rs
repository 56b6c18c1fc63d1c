//! 8-connected component labeling and boundary tracing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    /// Inclusive.
    pub x1: usize,
    /// Inclusive.
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// A connected foreground region. `pixels` are in raster order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub bbox: BBox,
    pub centroid: (f64, f64),
}

impl Region {
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        assert!(!pixels.is_empty(), "region must be non-empty");
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(x, y) in &pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            sx += x as f64;
            sy += y as f64;
        }
        let n = pixels.len();
        Self {
            area: n,
            bbox: BBox { x0, y0, x1, y1 },
            centroid: (sx / n as f64, sy / n as f64),
            pixels,
        }
    }

    /// Central second moments `(cxx, cyy, cxy)` with the `1/12` per-axis
    /// correction for unit pixels, so a single pixel is isotropic.
    pub fn second_moments(&self) -> (f64, f64, f64) {
        let n = self.area as f64;
        let (mx, my) = self.centroid;
        let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
        for &(x, y) in &self.pixels {
            let dx = x as f64 - mx;
            let dy = y as f64 - my;
            cxx += dx * dx;
            cyy += dy * dy;
            cxy += dx * dy;
        }
        (cxx / n + 1.0 / 12.0, cyy / n + 1.0 / 12.0, cxy / n)
    }

    /// Eigenvalues `(major, minor)` of the second-moment matrix and the
    /// orientation of the major axis in `[0, π)`.
    pub fn principal_axes(&self) -> (f64, f64, f64) {
        let (a, b, c) = self.second_moments();
        let tr = a + b;
        let disc = ((a - b) * (a - b) / 4.0 + c * c).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = (tr / 2.0 - disc).max(1e-12);
        let theta = super::quantile::normalize_angle(0.5 * (2.0 * c).atan2(a - b));
        (l1, l2, theta)
    }

    /// Local bitmap of the region over its bounding box.
    pub fn local_mask(&self) -> Mask {
        let mut m = Mask::new(self.bbox.width(), self.bbox.height());
        for &(x, y) in &self.pixels {
            m.set(x - self.bbox.x0, y - self.bbox.y0, true);
        }
        m
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.pixels.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).is_ok()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height);
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }
}

const NEIGHBORS8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected components, ordered by their first pixel in raster order.
pub fn connected_components(mask: &Mask) -> Vec<Region> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if seen[i] || !mask.bits()[i] {
                continue;
            }
            seen[i] = true;
            queue.push_back((x, y));
            let mut pixels = Vec::new();
            while let Some((px, py)) = queue.pop_front() {
                pixels.push((px, py));
                for (dx, dy) in NEIGHBORS8 {
                    let nx = px as i64 + dx;
                    let ny = py as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.bits()[j] {
                        seen[j] = true;
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
            regions.push(Region::from_pixels(pixels));
        }
    }
    regions
}

/// Outer boundary of a region as an ordered, closed pixel contour (Moore
/// neighbor tracing, clockwise in image coordinates). The first vertex is
/// the region's first raster pixel and is not repeated at the end.
pub fn trace_outline(region: &Region) -> Vec<(i64, i64)> {
    let local = region.local_mask();
    let ox = region.bbox.x0 as i64;
    let oy = region.bbox.y0 as i64;
    let inside = |x: i64, y: i64| local.get_signed(x - ox, y - oy);

    // Clockwise from west, in image coordinates (y down).
    const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];
    let start = (region.pixels[0].0 as i64, region.pixels[0].1 as i64);
    if region.area == 1 {
        return vec![start];
    }
    let mut contour = vec![start];
    let mut current = start;
    // The pixel west of the first raster pixel is background.
    let mut backtrack_dir = 0usize;
    let mut first_move: Option<(i64, i64)> = None;
    loop {
        let mut found = None;
        for k in 1..=8 {
            let d = (backtrack_dir + k) % 8;
            let cand = (current.0 + DIRS[d].0, current.1 + DIRS[d].1);
            if inside(cand.0, cand.1) {
                found = Some((cand, d));
                break;
            }
        }
        let Some((next, d)) = found else {
            break;
        };
        // Jacob's stopping criterion: back at start about to repeat the first move.
        if current == start {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => break,
                _ => {}
            }
        }
        contour.push(next);
        // Restart the sweep at (or just before) the last background pixel examined.
        backtrack_dir = (d + 5) % 8;
        current = next;
        if contour.len() > 4 * region.area + 8 {
            break;
        }
    }
    if contour.len() > 1 && contour.last() == Some(&start) {
        contour.pop();
    }
    contour
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flood_fill_oracle(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
        fn fill(m: &Mask, lab: &mut Vec<Option<usize>>, x: i64, y: i64, id: usize, out: &mut Vec<(usize, usize)>) {
            if !m.get_signed(x, y) {
                return;
            }
            let i = y as usize * m.width() + x as usize;
            if lab[i].is_some() {
                return;
            }
            lab[i] = Some(id);
            out.push((x as usize, y as usize));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx != 0 || dy != 0 {
                        fill(m, lab, x + dx, y + dy, id, out);
                    }
                }
            }
        }
        let mut lab = vec![None; mask.width() * mask.height()];
        let mut out = Vec::new();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) && lab[y * mask.width() + x].is_none() {
                    let mut px = Vec::new();
                    fill(mask, &mut lab, x as i64, y as i64, out.len(), &mut px);
                    px.sort_by_key(|&(x, y)| (y, x));
                    out.push(px);
                }
            }
        }
        out
    }

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(connected_components(&Mask::new(5, 4)).is_empty());
    }

    #[test]
    fn two_squares() {
        let m = Mask::from_fn(10, 5, |x, y| y >= 1 && y <= 3 && (x <= 2 || (x >= 6 && x <= 8)));
        let r = connected_components(&m);
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| r.area == 9));
        assert_eq!(r[0].centroid, (1.0, 2.0));
        assert_eq!(r[1].bbox, BBox { x0: 6, y0: 1, x1: 8, y1: 3 });
    }

    #[test]
    fn diagonal_pixels_connect() {
        let m = Mask::from_fn(3, 3, |x, y| x == y);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn random_masks_match_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let w = rng.random_range(1..30);
            let h = rng.random_range(1..30);
            let p = rng.random_range(0.1..0.7);
            let m = Mask::from_fn(w, h, |_, _| rng.random_bool(p));
            let got: Vec<_> = connected_components(&m).into_iter().map(|r| r.pixels).collect();
            assert_eq!(got, flood_fill_oracle(&m));
        }
    }

    #[test]
    fn outline_of_square_walks_border() {
        let m = Mask::from_fn(6, 6, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y));
        let r = &connected_components(&m)[0];
        let c = trace_outline(r);
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], (1, 1));
        assert!(c.contains(&(3, 3)));
        assert!(!c.contains(&(2, 2)));
    }

    #[test]
    fn outline_visits_every_boundary_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let m = Mask::from_fn(16, 16, |_, _| rng.random_bool(0.6));
            for r in connected_components(&m) {
                let c = trace_outline(&r);
                let local = r.local_mask();
                // Background 4-connected to the outside of the bounding box; holes excluded.
                let (lw, lh) = (local.width() as i64 + 2, local.height() as i64 + 2);
                let mut outer = vec![false; (lw * lh) as usize];
                let mut stack = vec![(0i64, 0i64)];
                outer[0] = true;
                while let Some((px, py)) = stack.pop() {
                    for (dx, dy) in [(0, -1), (-1, 0), (1, 0), (0, 1)] {
                        let (nx, ny) = (px + dx, py + dy);
                        if nx < 0 || ny < 0 || nx >= lw || ny >= lh {
                            continue;
                        }
                        let k = (ny * lw + nx) as usize;
                        if !outer[k] && !local.get_signed(nx - 1, ny - 1) {
                            outer[k] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
                for &(x, y) in &r.pixels {
                    let lx = (x - r.bbox.x0) as i64;
                    let ly = (y - r.bbox.y0) as i64;
                    let boundary = [(0, -1), (-1, 0), (1, 0), (0, 1)]
                        .iter()
                        .any(|(dx, dy)| outer[((ly + dy + 1) * lw + lx + dx + 1) as usize]);
                    if boundary {
                        assert!(c.contains(&(x as i64, y as i64)), "missed boundary pixel {x},{y}");
                    }
                }
                assert!(c.iter().all(|&(x, y)| r.contains(x as usize, y as usize)));
            }
        }
    }

    proptest! {
        #[test]
        fn areas_sum_to_foreground(bits in proptest::collection::vec(any::<bool>(), 20 * 15)) {
            let m = Mask::from_bits(20, 15, bits).unwrap();
            let regions = connected_components(&m);
            prop_assert_eq!(regions.iter().map(|r| r.area).sum::<usize>(), m.count());
        }
    }
}
