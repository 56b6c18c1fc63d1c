//! Exhaustive scoring of segments at every pixel, angle and length.
//!
//! A stump on feature `(channel, rect, q)` with threshold `t` goes left when
//! the `k`-th smallest value in the rectangle is below `t`, i.e. when at
//! least `k` pixels lie below `t`. Since channels are quantized, "below `t`"
//! is a level comparison, so the scan only needs, per (channel, rect), a
//! histogram over the few level thresholds the model actually uses. Those
//! histograms are slid along each row. Scores are accumulated in model
//! order, so every value equals `score(segment_features(..))` exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureLayout, FeatureStack, WormSegment, PAD_LEVEL};
use super::SegmenterError;
use crate::boosting::StumpEnsemble;
use crate::imagecore::{for_each_pixel_in, nearest_rank};

/// Angles and lengths evaluated at each pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub angles: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl ScanGrid {
    pub fn new(angle_step_deg: f64, lengths: Vec<f64>) -> Result<Self, SegmenterError> {
        if lengths.is_empty() || lengths.len() > u8::MAX as usize {
            return Err(SegmenterError::Config("length grid must have 1..=255 entries".into()));
        }
        let angles = super::features::angle_grid(angle_step_deg)?;
        if angles.len() > u8::MAX as usize {
            return Err(SegmenterError::Config("too many angle steps".into()));
        }
        Ok(Self { angles, lengths })
    }
}

/// Per-pixel best segment score with its angle and length indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreImage {
    pub width: usize,
    pub height: usize,
    pub best_score: Vec<f64>,
    pub best_angle: Vec<u8>,
    pub best_length: Vec<u8>,
    pub grid: ScanGrid,
}

impl ScoreImage {
    #[inline]
    pub fn score(&self, x: usize, y: usize) -> f64 {
        self.best_score[y * self.width + x]
    }

    pub fn angle_at(&self, x: usize, y: usize) -> f64 {
        self.grid.angles[self.best_angle[y * self.width + x] as usize]
    }

    /// The best segment found at pixel `(x, y)`.
    pub fn segment_at(&self, x: usize, y: usize) -> WormSegment {
        let i = y * self.width + x;
        WormSegment {
            center: (x as f64, y as f64),
            angle: self.grid.angles[self.best_angle[i] as usize],
            length: self.grid.lengths[self.best_length[i] as usize],
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.best_score
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Stumps on one (channel, rect) pair.
struct Group {
    channel: usize,
    rect: usize,
    /// Distinct level thresholds, ascending.
    thresholds: Vec<u8>,
    /// Level to bucket (number of thresholds `<=` level); padding maps to
    /// the discard bucket `thresholds.len() + 1`.
    lut: [u8; 256],
}

struct StumpRef {
    group: usize,
    threshold: usize,
    quantile: usize,
    left: f64,
    right: f64,
}

/// One row of a rectangle template: pixels `dx0..=dx1` at row offset `dy`.
#[derive(Clone, Copy)]
struct Run {
    dy: i64,
    dx0: i64,
    dx1: i64,
}

struct Plan {
    groups: Vec<Group>,
    stumps: Vec<StumpRef>,
    /// `templates[config][rect]`, config = angle * lengths + length.
    templates: Vec<Vec<Vec<Run>>>,
    /// Configs whose templates are expressed in transposed coordinates and
    /// scanned over the transposed image (fewer rows for steep angles).
    transposed: Vec<bool>,
    used_rects: Vec<usize>,
    /// `ranks[q][n]` = nearest rank of quantile `q` among `n` values.
    ranks: Vec<Vec<u32>>,
    pad: usize,
}

/// Template of a rectangle as row runs; with `transposed`, rows are the
/// original columns (`dy` and `dx` swap roles).
fn template(layout: &FeatureLayout, r: usize, angle: f64, length: f64, transposed: bool) -> Vec<Run> {
    let (offset, shape) = layout.rect_geometry(r, angle, length);
    let (ex, ey) = shape.extent();
    let reach = (offset.0.abs() + ex).max(offset.1.abs() + ey).ceil() as i64 + 1;
    let side = (2 * reach + 1) as usize;
    let anchor = (reach as f64, reach as f64);
    let mut rows: Vec<Option<(i64, i64)>> = vec![None; side];
    let mut count = 0usize;
    for_each_pixel_in(side, side, anchor, offset, &shape, |x, y| {
        let (u, v) = if transposed { (y, x) } else { (x, y) };
        let du = u as i64 - reach;
        let row = &mut rows[v];
        *row = Some(match *row {
            None => (du, du),
            Some((a, b)) => (a.min(du), b.max(du)),
        });
        count += 1;
    });
    let mut runs = Vec::new();
    let mut covered = 0;
    for (v, row) in rows.iter().enumerate() {
        if let Some((a, b)) = *row {
            runs.push(Run { dy: v as i64 - reach, dx0: a, dx1: b });
            covered += (b - a + 1) as usize;
        }
    }
    // Rectangles are convex, so each row is one contiguous run.
    debug_assert_eq!(covered, count);
    runs
}

fn build_plan(stack: &FeatureStack, layout: &FeatureLayout, grid: &ScanGrid, model: &StumpEnsemble) -> Plan {
    let mut groups: Vec<Group> = Vec::new();
    let mut raw: Vec<(usize, u8, usize, f64, f64)> = Vec::with_capacity(model.stumps.len());
    for s in &model.stumps {
        let (c, r, q) = layout.decompose(s.feature_index);
        let lt = stack.channels[c].level_threshold(s.threshold);
        let g = match groups.iter().position(|g| g.channel == c && g.rect == r) {
            Some(g) => g,
            None => {
                groups.push(Group {
                    channel: c,
                    rect: r,
                    thresholds: Vec::new(),
                    lut: [0; 256],
                });
                groups.len() - 1
            }
        };
        if !groups[g].thresholds.contains(&lt) {
            groups[g].thresholds.push(lt);
        }
        raw.push((g, lt, q, s.left, s.right));
    }
    for g in &mut groups {
        g.thresholds.sort_unstable();
        for l in 0..PAD_LEVEL {
            g.lut[l as usize] = g.thresholds.iter().filter(|&&t| t <= l).count() as u8;
        }
        g.lut[PAD_LEVEL as usize] = g.thresholds.len() as u8 + 1;
    }
    let stumps = raw
        .into_iter()
        .map(|(g, lt, q, left, right)| StumpRef {
            group: g,
            threshold: groups[g].thresholds.iter().position(|&t| t == lt).unwrap(),
            quantile: q,
            left,
            right,
        })
        .collect();
    let mut used_rects: Vec<usize> = groups.iter().map(|g| g.rect).collect();
    used_rects.sort_unstable();
    used_rects.dedup();

    let mut templates = Vec::new();
    let mut transposed = Vec::new();
    let mut pad = 1usize;
    let mut max_n = 1usize;
    for &a in &grid.angles {
        for &l in &grid.lengths {
            let build = |t: bool| -> Vec<Vec<Run>> {
                (0..layout.rects.len())
                    .map(|r| if used_rects.contains(&r) { template(layout, r, a, l, t) } else { Vec::new() })
                    .collect()
            };
            let (plain, flipped) = (build(false), build(true));
            let rows = |t: &Vec<Vec<Run>>| t.iter().map(Vec::len).sum::<usize>();
            let flip = rows(&flipped) < rows(&plain);
            let per_rect = if flip { flipped } else { plain };
            transposed.push(flip);
            for runs in &per_rect {
                let mut n = 0;
                for run in runs {
                    pad = pad.max(run.dy.unsigned_abs() as usize + 1);
                    pad = pad.max(run.dx0.unsigned_abs() as usize + 2);
                    pad = pad.max(run.dx1.unsigned_abs() as usize + 2);
                    n += (run.dx1 - run.dx0 + 1) as usize;
                }
                max_n = max_n.max(n);
            }
            templates.push(per_rect);
        }
    }
    let ranks = layout
        .quantiles
        .iter()
        .map(|&q| (0..=max_n).map(|n| if n == 0 { 0 } else { nearest_rank(q, n) as u32 }).collect())
        .collect();
    Plan {
        groups,
        stumps,
        templates,
        transposed,
        used_rects,
        ranks,
        pad,
    }
}

/// Hot-loop layout: for each used rectangle, the buckets of all its groups
/// interleaved per padded pixel, stored directly as indices into one flat
/// histogram shared by all groups.
struct Buffers {
    pw: usize,
    /// Parallel to `plan.used_rects`.
    per_rect: Vec<RectBuffer>,
    hist_len: usize,
    /// Histogram offset and size (thresholds + 2) of each group.
    hist_off: Vec<usize>,
    hist_size: Vec<usize>,
}

struct RectBuffer {
    rect: usize,
    stride: usize,
    data: Vec<u16>,
}

fn build_buffers(stack: &FeatureStack, plan: &Plan, transposed: bool) -> Buffers {
    let (sw, sh) = (stack.width(), stack.height());
    let (w, h) = if transposed { (sh, sw) } else { (sw, sh) };
    let p = plan.pad;
    let pw = w + 2 * p;
    let ph = h + 2 * p;
    let hist_size: Vec<usize> = plan.groups.iter().map(|g| g.thresholds.len() + 2).collect();
    let mut hist_off = Vec::with_capacity(hist_size.len());
    let mut acc = 0;
    for &s in &hist_size {
        hist_off.push(acc);
        acc += s;
    }
    assert!(acc <= u16::MAX as usize, "histogram too large for index type");
    let per_rect = plan
        .used_rects
        .iter()
        .map(|&r| {
            let members: Vec<usize> = (0..plan.groups.len()).filter(|&g| plan.groups[g].rect == r).collect();
            let stride = members.len();
            let mut data = vec![0u16; pw * ph * stride];
            for (k, &g) in members.iter().enumerate() {
                let grp = &plan.groups[g];
                let pad_idx = (hist_off[g] + grp.lut[PAD_LEVEL as usize] as usize) as u16;
                for i in 0..pw * ph {
                    data[i * stride + k] = pad_idx;
                }
                let levels = &stack.channels[grp.channel].levels;
                for y in 0..h {
                    for x in 0..w {
                        let i = (y + p) * pw + p + x;
                        let src = if transposed { x * sw + y } else { y * sw + x };
                        data[i * stride + k] = (hist_off[g] + grp.lut[levels[src] as usize] as usize) as u16;
                    }
                }
            }
            RectBuffer { rect: r, stride, data }
        })
        .collect();
    Buffers {
        pw,
        per_rect,
        hist_len: acc,
        hist_off,
        hist_size,
    }
}

struct RowResult {
    score: Vec<f64>,
    config: Vec<u16>,
}

#[inline(always)]
fn slide(hist: &mut [u32], data: &[u16], out_at: usize, in_at: usize, stride: usize) {
    let (o, i) = (&data[out_at..out_at + stride], &data[in_at..in_at + stride]);
    for k in 0..stride {
        // Indices were built from offsets below hist.len(); see build_buffers.
        let (a, b) = (o[k] as usize, i[k] as usize);
        debug_assert!(a < hist.len() && b < hist.len());
        unsafe {
            *hist.get_unchecked_mut(a) -= 1;
            *hist.get_unchecked_mut(b) += 1;
        }
    }
}

fn scan_row(y: usize, width: usize, plan: &Plan, buf: &Buffers, configs: &[usize]) -> RowResult {
    let pw = buf.pw as i64;
    let p = plan.pad as i64;
    let ng = plan.groups.len();
    let mut hist = vec![0u32; buf.hist_len];
    let mut cum = vec![0u32; buf.hist_len];
    let mut totals = vec![0u32; ng];
    let mut best = vec![f64::NEG_INFINITY; width];
    let mut best_c = vec![0u16; width];

    let base_row = (y as i64 + p) * pw + p;
    let mut runs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buf.per_rect.len()];
    for &ci in configs {
        let per_rect = &plan.templates[ci];
        // Padded pixel index of each run's first pixel and one past its last, at x = 0.
        for (ri, rb) in buf.per_rect.iter().enumerate() {
            runs[ri].clear();
            for r in &per_rect[rb.rect] {
                let s = base_row + r.dy * pw + r.dx0;
                let e = base_row + r.dy * pw + r.dx1 + 1;
                runs[ri].push((s as usize, e as usize));
            }
        }
        hist.fill(0);
        for (ri, rb) in buf.per_rect.iter().enumerate() {
            for &(s, e) in &runs[ri] {
                for i in s..e {
                    for k in 0..rb.stride {
                        hist[rb.data[i * rb.stride + k] as usize] += 1;
                    }
                }
            }
        }
        for x in 0..width {
            if x > 0 {
                for (ri, rb) in buf.per_rect.iter().enumerate() {
                    let st = rb.stride;
                    for &(s, e) in &runs[ri] {
                        slide(&mut hist, &rb.data, (s + x - 1) * st, (e + x - 1) * st, st);
                    }
                }
            }
            for g in 0..ng {
                let off = buf.hist_off[g];
                let m = buf.hist_size[g] - 2;
                let mut acc = 0;
                for i in 0..=m {
                    acc += hist[off + i];
                    cum[off + i] = acc;
                }
                totals[g] = acc;
            }
            let mut s = 0.0;
            for st in &plan.stumps {
                let n = totals[st.group];
                let left =
                    n == 0 || cum[buf.hist_off[st.group] + st.threshold] >= plan.ranks[st.quantile][n as usize];
                s += if left { st.left } else { st.right };
            }
            if s > best[x] {
                best[x] = s;
                best_c[x] = ci as u16;
            }
        }
    }
    RowResult {
        score: best,
        config: best_c,
    }
}

/// Run `configs` over every row of the (possibly transposed) image; returns
/// per-pixel best score and config in original raster order.
fn scan_pass(
    stack: &FeatureStack,
    plan: &Plan,
    configs: &[usize],
    transposed: bool,
    parallel: bool,
) -> (Vec<f64>, Vec<u16>) {
    let (sw, sh) = (stack.width(), stack.height());
    let (w, h) = if transposed { (sh, sw) } else { (sw, sh) };
    let buf = build_buffers(stack, plan, transposed);
    let rows: Vec<RowResult> = if parallel {
        (0..h).into_par_iter().map(|y| scan_row(y, w, plan, &buf, configs)).collect()
    } else {
        (0..h).map(|y| scan_row(y, w, plan, &buf, configs)).collect()
    };
    let mut score = vec![0.0; sw * sh];
    let mut config = vec![0u16; sw * sh];
    for (y, r) in rows.into_iter().enumerate() {
        for x in 0..w {
            let dst = if transposed { x * sw + y } else { y * sw + x };
            score[dst] = r.score[x];
            config[dst] = r.config[x];
        }
    }
    (score, config)
}

/// Score every pixel at every grid angle and length; keep the maximum, ties
/// going to the smallest (angle index, length index).
pub fn dense_score(
    stack: &FeatureStack,
    layout: &FeatureLayout,
    grid: &ScanGrid,
    model: &StumpEnsemble,
) -> Result<ScoreImage, SegmenterError> {
    dense_score_with(stack, layout, grid, model, true)
}

/// As [`dense_score`], optionally on the calling thread only. Both paths
/// produce identical results.
pub fn dense_score_with(
    stack: &FeatureStack,
    layout: &FeatureLayout,
    grid: &ScanGrid,
    model: &StumpEnsemble,
    parallel: bool,
) -> Result<ScoreImage, SegmenterError> {
    let dim = layout.dimensionality(stack.channels.len());
    if model.dimensionality != dim {
        return Err(SegmenterError::Boost(crate::boosting::BoostError::Dimensionality {
            expected: model.dimensionality,
            got: dim,
        }));
    }
    model.validate()?;
    layout.validate(&grid.lengths)?;
    let (w, h) = (stack.width(), stack.height());
    if model.stumps.is_empty() {
        return Ok(ScoreImage {
            width: w,
            height: h,
            best_score: vec![0.0; w * h],
            best_angle: vec![0; w * h],
            best_length: vec![0; w * h],
            grid: grid.clone(),
        });
    }
    let plan = build_plan(stack, layout, grid, model);
    debug_assert!(!plan.used_rects.is_empty());
    let nl = grid.lengths.len();
    let (flat, steep): (Vec<usize>, Vec<usize>) = (0..plan.templates.len()).partition(|&c| !plan.transposed[c]);
    let mut passes = Vec::new();
    if !flat.is_empty() {
        passes.push(scan_pass(stack, &plan, &flat, false, parallel));
    }
    if !steep.is_empty() {
        passes.push(scan_pass(stack, &plan, &steep, true, parallel));
    }
    let (mut score, mut config) = passes.remove(0);
    for (s2, c2) in passes {
        for i in 0..score.len() {
            // Same rule as a single pass in config order: higher wins, ties to the lower config.
            if s2[i] > score[i] || (s2[i] == score[i] && c2[i] < config[i]) {
                score[i] = s2[i];
                config[i] = c2[i];
            }
        }
    }
    Ok(ScoreImage {
        width: w,
        height: h,
        best_angle: config.iter().map(|&c| (c as usize / nl) as u8).collect(),
        best_length: config.iter().map(|&c| (c as usize % nl) as u8).collect(),
        best_score: score,
        grid: grid.clone(),
    })
}

/// Direct evaluation from the definition: features for every segment,
/// scored one at a time. Slow; for verification.
pub fn dense_score_reference(
    stack: &FeatureStack,
    layout: &FeatureLayout,
    grid: &ScanGrid,
    model: &StumpEnsemble,
) -> Result<ScoreImage, SegmenterError> {
    let (w, h) = (stack.width(), stack.height());
    let mut out = ScoreImage {
        width: w,
        height: h,
        best_score: vec![f64::NEG_INFINITY; w * h],
        best_angle: vec![0; w * h],
        best_length: vec![0; w * h],
        grid: grid.clone(),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (a, &angle) in grid.angles.iter().enumerate() {
                for (l, &length) in grid.lengths.iter().enumerate() {
                    let seg = WormSegment {
                        center: (x as f64, y as f64),
                        angle,
                        length,
                    };
                    let f = super::features::segment_features(stack, layout, &seg)?;
                    let s = model.score(&f)?;
                    if s > out.best_score[i] {
                        out.best_score[i] = s;
                        out.best_angle[i] = a as u8;
                        out.best_length[i] = l as u8;
                    }
                }
            }
        }
    }
    Ok(out)
}
