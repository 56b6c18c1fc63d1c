use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{SynthConfig, SynthError};
use crate::boosting::derive_seed;
use crate::imagecore::{gaussian_blur, GrayImage, Mask};
use crate::segmenter::{ImageAnnotations, WormAnnotation};

/// One rendered well with its full ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub bf: GrayImage,
    pub fl: GrayImage,
    pub worm_masks: Vec<Mask>,
    pub stripe_masks: Vec<Mask>,
    /// Pixels of the first of each worm's two stripes; the rest of
    /// `stripe_masks[i]` is the second.
    pub stripe_side_a: Vec<Mask>,
    pub annotations: Vec<WormAnnotation>,
    pub track_mask: Mask,
    pub decoys: Vec<(f64, f64)>,
    /// Per-well fluorescence gain.
    pub gain: f64,
}

impl SynthScene {
    pub fn width(&self) -> usize {
        self.bf.width()
    }

    pub fn height(&self) -> usize {
        self.bf.height()
    }

    pub fn worm_union(&self) -> Mask {
        union(self.width(), self.height(), &self.worm_masks)
    }

    pub fn stripe_union(&self) -> Mask {
        union(self.width(), self.height(), &self.stripe_masks)
    }

    /// Stripe area over worm area for worm `i`.
    pub fn stripe_ratio(&self, i: usize) -> f64 {
        self.stripe_masks[i].count() as f64 / self.worm_masks[i].count() as f64
    }

    /// Annotation file for this scene under `image_id`.
    pub fn annotation_file(&self, image_id: &str) -> ImageAnnotations {
        ImageAnnotations {
            image_id: image_id.to_string(),
            worms: self
                .annotations
                .iter()
                .cloned()
                .map(|mut a| {
                    a.image_id = image_id.to_string();
                    a
                })
                .collect(),
        }
    }
}

fn union(w: usize, h: usize, masks: &[Mask]) -> Mask {
    let mut m = Mask::new(w, h);
    for k in masks {
        m.union_with(k);
    }
    m
}

const STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
struct Sample {
    p: (f64, f64),
    t: (f64, f64),
    s: f64,
}

/// A tapered tube around a sinusoidal midline.
struct Tube {
    samples: Vec<Sample>,
    length: f64,
    half_width: f64,
}

fn taper(u: f64) -> f64 {
    (1.0 - (2.0 * u - 1.0).abs().powi(8)).max(0.0).sqrt()
}

impl Tube {
    fn sinusoid(center: (f64, f64), heading: f64, length: f64, amp: f64, period: f64, phase: f64, half_width: f64) -> Tube {
        let curve = |t: f64| (t, amp * (2.0 * PI * t / period + phase).sin());
        let mut raw = vec![curve(0.0)];
        let mut cum = vec![0.0];
        let dt = 0.1;
        let mut t = 0.0;
        while *cum.last().unwrap() < length {
            t += dt;
            let p = curve(t);
            let q = *raw.last().unwrap();
            cum.push(cum.last().unwrap() + ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt());
            raw.push(p);
        }
        let n = (length / STEP).floor() as usize;
        let mut stations: Vec<f64> = (0..=n).map(|k| k as f64 * STEP).collect();
        if length - stations[n] > 1e-9 {
            stations.push(length);
        }
        let mut pts = Vec::with_capacity(stations.len());
        let mut j = 0;
        for &s in &stations {
            while j + 2 < cum.len() && cum[j + 1] < s {
                j += 1;
            }
            let f = ((s - cum[j]) / (cum[j + 1] - cum[j])).clamp(0.0, 1.0);
            pts.push((raw[j].0 + f * (raw[j + 1].0 - raw[j].0), raw[j].1 + f * (raw[j + 1].1 - raw[j].1)));
        }
        let mid = pts[pts.len() / 2];
        let (sh, ch) = heading.sin_cos();
        let place = |p: (f64, f64)| {
            let (x, y) = (p.0 - mid.0, p.1 - mid.1);
            (center.0 + ch * x - sh * y, center.1 + sh * x + ch * y)
        };
        let pts: Vec<(f64, f64)> = pts.into_iter().map(place).collect();
        let last = pts.len() - 1;
        let samples = (0..pts.len())
            .map(|i| {
                let a = pts[i.saturating_sub(1)];
                let b = pts[(i + 1).min(last)];
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let norm = (dx * dx + dy * dy).sqrt();
                Sample {
                    p: pts[i],
                    t: (dx / norm, dy / norm),
                    s: stations[i],
                }
            })
            .collect();
        Tube {
            samples,
            length,
            half_width,
        }
    }

    fn half_width_at(&self, s: f64) -> f64 {
        self.half_width * taper(s / self.length)
    }

    fn sample_at(&self, s: f64) -> Sample {
        let k = ((s / STEP).round() as usize).min(self.samples.len() - 1);
        self.samples[k]
    }

    fn inside(&self, width: usize, height: usize, margin: f64) -> bool {
        let (lo_x, hi_x) = (margin, width as f64 - 1.0 - margin);
        let (lo_y, hi_y) = (margin, height as f64 - 1.0 - margin);
        self.samples.iter().all(|sm| {
            let h = self.half_width_at(sm.s);
            sm.p.0 - h >= lo_x && sm.p.0 + h <= hi_x && sm.p.1 - h >= lo_y && sm.p.1 + h <= hi_y
        })
    }

    /// Nearest-midline geometry for every pixel within `pad` of the widest
    /// cross-section, clipped to the image.
    fn field(&self, width: usize, height: usize, pad: f64) -> Field {
        let reach = self.half_width + pad;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for sm in &self.samples {
            x0 = x0.min(sm.p.0);
            y0 = y0.min(sm.p.1);
            x1 = x1.max(sm.p.0);
            y1 = y1.max(sm.p.1);
        }
        let cx0 = ((x0 - reach).floor().max(0.0)) as usize;
        let cy0 = ((y0 - reach).floor().max(0.0)) as usize;
        let cx1 = ((x1 + reach).ceil().min(width as f64 - 1.0)).max(-1.0);
        let cy1 = ((y1 + reach).ceil().min(height as f64 - 1.0)).max(-1.0);
        if cx1 < cx0 as f64 || cy1 < cy0 as f64 {
            return Field::empty();
        }
        let (fw, fh) = (cx1 as usize - cx0 + 1, cy1 as usize - cy0 + 1);
        let mut f = Field {
            x0: cx0,
            y0: cy0,
            w: fw,
            h: fh,
            dist2: vec![f64::INFINITY; fw * fh],
            sample: vec![0; fw * fh],
        };
        let r2 = reach * reach;
        for (k, sm) in self.samples.iter().enumerate() {
            let xa = ((sm.p.0 - reach).floor().max(cx0 as f64)) as usize;
            let xb = ((sm.p.0 + reach).ceil().min(cx1)) as i64;
            let ya = ((sm.p.1 - reach).floor().max(cy0 as f64)) as usize;
            let yb = ((sm.p.1 + reach).ceil().min(cy1)) as i64;
            for y in ya as i64..=yb {
                let dy = y as f64 - sm.p.1;
                for x in xa as i64..=xb {
                    let dx = x as f64 - sm.p.0;
                    let d2 = dx * dx + dy * dy;
                    if d2 > r2 {
                        continue;
                    }
                    let i = (y as usize - cy0) * fw + (x as usize - cx0);
                    if d2 < f.dist2[i] {
                        f.dist2[i] = d2;
                        f.sample[i] = k;
                    }
                }
            }
        }
        f
    }

    /// Visit every pixel of the field that has a nearest sample.
    fn for_each_pixel(&self, f: &Field, mut visit: impl FnMut(usize, usize, Geometry)) {
        for fy in 0..f.h {
            for fx in 0..f.w {
                let i = fy * f.w + fx;
                if !f.dist2[i].is_finite() {
                    continue;
                }
                let sm = self.samples[f.sample[i]];
                let (x, y) = (f.x0 + fx, f.y0 + fy);
                let dist = f.dist2[i].sqrt();
                let hw = self.half_width_at(sm.s);
                let lateral = sm.t.0 * (y as f64 - sm.p.1) - sm.t.1 * (x as f64 - sm.p.0);
                visit(
                    x,
                    y,
                    Geometry {
                        dist,
                        s: sm.s,
                        half_width: hw,
                        r: if hw > 0.0 { dist / hw } else { f64::INFINITY },
                        lateral,
                    },
                );
            }
        }
    }
}

struct Field {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    dist2: Vec<f64>,
    sample: Vec<usize>,
}

impl Field {
    fn empty() -> Self {
        Field {
            x0: 0,
            y0: 0,
            w: 0,
            h: 0,
            dist2: Vec::new(),
            sample: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    dist: f64,
    s: f64,
    half_width: f64,
    /// Distance in units of the local half-width; the body is `r <= 1`.
    r: f64,
    /// Signed offset from the midline, positive to the left of travel.
    lateral: f64,
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

struct PlacedWorm {
    tube: Tube,
    field: Field,
}

fn random_tube(rng: &mut ChaCha8Rng, cfg: &SynthConfig, length: (f64, f64)) -> Tube {
    let len = uniform(rng, length);
    let hw = uniform(rng, cfg.worm_width) / 2.0;
    let amp = uniform(rng, cfg.amplitude);
    let period = uniform(rng, cfg.period);
    let phase = rng.random_range(0.0..2.0 * PI);
    let heading = rng.random_range(0.0..2.0 * PI);
    let center = (
        rng.random_range(0.0..cfg.width as f64),
        rng.random_range(0.0..cfg.height as f64),
    );
    Tube::sinusoid(center, heading, len, amp, period, phase, hw)
}

fn annotation_for(tube: &Tube, worm_id: u32) -> WormAnnotation {
    let trim = 2.0f64.min(tube.length / 4.0);
    let mut stations = Vec::new();
    let mut s = trim;
    let end = tube.length - trim;
    while s < end - 1.0 {
        stations.push(s);
        s += 4.0;
    }
    stations.push(end);
    let mut a = WormAnnotation {
        worm_id,
        image_id: String::new(),
        midline: Vec::new(),
        side_a: Vec::new(),
        side_b: Vec::new(),
    };
    for s in stations {
        let sm = tube.sample_at(s);
        let hw = tube.half_width_at(sm.s).max(0.75);
        let n = (-sm.t.1, sm.t.0);
        a.midline.push(sm.p);
        a.side_a.push((sm.p.0 + hw * n.0, sm.p.1 + hw * n.1));
        a.side_b.push((sm.p.0 - hw * n.0, sm.p.1 - hw * n.1));
    }
    a
}

/// Disjoint lit intervals `(start, end, gain)` along `[s0, s1]`.
fn stripe_patches(rng: &mut ChaCha8Rng, s0: f64, s1: f64, rate: f64, breaks: (f64, f64), jitter: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let gap = Exp::new(rate / 100.0).ok();
    let spread = Normal::new(0.0, jitter).expect("finite jitter");
    let mut pos = s0;
    while pos < s1 {
        let len = match (&gap, rate > 0.0) {
            (Some(g), true) => g.sample(rng),
            _ => f64::INFINITY,
        };
        let end = (pos + len).min(s1);
        let factor = (spread.sample(rng) - jitter * jitter / 2.0).exp();
        out.push((pos, end, factor));
        pos = end + uniform(rng, breaks);
    }
    out
}

fn lit(patches: &[(f64, f64, f64)], s: f64) -> Option<f64> {
    patches.iter().find(|p| s >= p.0 && s < p.1).map(|p| p.2)
}

/// Render one well. Pure in `cfg` (including its seed).
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));

    let mut worms: Vec<PlacedWorm> = Vec::with_capacity(cfg.worm_count);
    let mut occupied = Mask::new(w, h);
    let mut worm_masks = Vec::with_capacity(cfg.worm_count);
    for placed in 0..cfg.worm_count {
        let mut accepted = None;
        for _ in 0..cfg.placement_attempts {
            let tube = random_tube(&mut rng, cfg, cfg.worm_length);
            if !tube.inside(w, h, cfg.margin) {
                continue;
            }
            let field = tube.field(w, h, tube.half_width + 3.0);
            let mut mask = Mask::new(w, h);
            tube.for_each_pixel(&field, |x, y, g| {
                if g.r <= 1.0 {
                    mask.set(x, y, true);
                }
            });
            let area = mask.count();
            if area == 0 || mask.intersection_count(&occupied) as f64 > cfg.max_overlap * area as f64 {
                continue;
            }
            accepted = Some((tube, field, mask));
            break;
        }
        let Some((tube, field, mask)) = accepted else {
            return Err(SynthError::Packing {
                placed,
                requested: cfg.worm_count,
                attempts: cfg.placement_attempts,
            });
        };
        occupied.union_with(&mask);
        worm_masks.push(mask);
        worms.push(PlacedWorm { tube, field });
    }

    let tracks: Vec<(Tube, f64)> = (0..cfg.track_count)
        .map(|_| {
            let t = random_tube(&mut rng, cfg, cfg.track_length);
            let c = uniform(&mut rng, cfg.track_contrast);
            (t, c)
        })
        .collect();

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let lambda = rng.random_range(60.0..200.0);
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / lambda;
            (k * theta.cos(), k * theta.sin(), phase, cfg.texture / 4.0)
        })
        .collect();

    // Brightfield.
    let mut bf = GrayImage::from_fn(w, h, |x, y| {
        let shade: f64 = waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).cos()).sum();
        cfg.background * (1.0 + shade)
    });
    let mut track_mask = Mask::new(w, h);
    for (tube, contrast) in &tracks {
        let field = tube.field(w, h, 1.0);
        tube.for_each_pixel(&field, |x, y, g| {
            if g.r < 1.0 {
                let prof = (1.0 - g.r * g.r).powi(2);
                bf.set(x, y, bf.get(x, y) * (1.0 - contrast * cfg.worm_darkening * prof));
                track_mask.set(x, y, true);
            }
        });
    }
    let mut owner_r = vec![f64::NAN; w * h];
    let mut halo = vec![0.0f64; w * h];
    for pw in &worms {
        pw.tube.for_each_pixel(&pw.field, |x, y, g| {
            let i = y * w + x;
            if g.r <= 1.0 {
                owner_r[i] = g.r;
            } else {
                let rim = cfg.rim_brightness * (-((g.r - 1.0) / cfg.rim_width).powi(2)).exp();
                halo[i] = halo[i].max(rim);
            }
        });
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let base = bf.get(x, y);
            let r = owner_r[i];
            let v = if r.is_nan() {
                base + halo[i]
            } else {
                let dark = cfg.worm_darkening * (0.8 + 0.2 * (1.0 - r * r));
                base * (1.0 - dark) + cfg.rim_brightness * (-((r - 1.0) / cfg.rim_width).powi(2)).exp()
            };
            bf.set(x, y, v);
        }
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let rmax = (cx * cx + cy * cy).sqrt().max(1.0);
    let rho = |x: usize, y: usize| (((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / rmax).min(1.0);
    let mut bf = GrayImage::from_fn(w, h, |x, y| bf.get(x, y) * (1.0 - cfg.vignette * rho(x, y).powi(2)));
    if cfg.border_blur_sigma > 0.0 {
        let blurred = gaussian_blur(&bf, cfg.border_blur_sigma);
        bf = GrayImage::from_fn(w, h, |x, y| {
            let a = rho(x, y).powi(4);
            (1.0 - a) * bf.get(x, y) + a * blurred.get(x, y)
        });
    }

    // Fluorescence.
    let gain = if cfg.fluor.gain_sigma > 0.0 {
        Normal::new(0.0, cfg.fluor.gain_sigma).expect("finite sigma").sample(&mut frng).exp()
    } else {
        1.0
    };
    let sp = cfg.stripe_params();
    let mut fl = GrayImage::filled(w, h, cfg.fluor.background);
    let mut stripe_masks = Vec::with_capacity(worms.len());
    let mut stripe_side_a = Vec::with_capacity(worms.len());
    let lumen = cfg.fluor.lumen_half_gap;
    for pw in &worms {
        let tube = &pw.tube;
        let af = (sp.area_fraction + frng.random_range(-1.0..=1.0) * sp.area_jitter).clamp(0.02, 0.98);
        let (s0, s1) = (sp.extent.0 * tube.length, sp.extent.1 * tube.length);
        let sides = [
            stripe_patches(&mut frng, s0, s1, sp.break_rate, sp.break_length, sp.brightness_jitter),
            stripe_patches(&mut frng, s0, s1, sp.break_rate, sp.break_length, sp.brightness_jitter),
        ];
        let mut stripes = Mask::new(w, h);
        let mut side_a = Mask::new(w, h);
        tube.for_each_pixel(&pw.field, |x, y, g| {
            if g.r > 1.0 {
                return;
            }
            let mut v = fl.get(x, y) + gain * sp.diffuse * (0.85 + 0.15 * (1.0 - g.r * g.r));
            let outer = lumen + af * (g.half_width - lumen);
            if g.half_width > lumen && g.dist >= lumen && g.dist <= outer && g.s >= s0 && g.s < s1 {
                let side = if g.lateral >= 0.0 { 0 } else { 1 };
                if let Some(factor) = lit(&sides[side], g.s) {
                    v += gain * sp.brightness * factor;
                    stripes.set(x, y, true);
                    if side == 0 {
                        side_a.set(x, y, true);
                    }
                }
            }
            fl.set(x, y, v);
        });
        stripe_masks.push(stripes);
        stripe_side_a.push(side_a);
    }
    let mut decoys = Vec::new();
    let fp = &cfg.fluor;
    let n_decoys: usize = (0..worms.len()).map(|_| frng.random_range(fp.decoys_per_worm.0..=fp.decoys_per_worm.1)).sum();
    if n_decoys > 0 {
        let keep_out = occupied.dilate(fp.decoy_clearance.ceil() as usize);
        for _ in 0..n_decoys {
            let sigma = uniform(&mut frng, fp.decoy_sigma);
            let major = sigma * uniform(&mut frng, fp.decoy_elongation);
            let theta = frng.random_range(0.0..PI);
            let amp = uniform(&mut frng, fp.decoy_amplitude) * gain;
            let mut center = None;
            for _ in 0..50 {
                let c = (frng.random_range(0.0..w as f64), frng.random_range(0.0..h as f64));
                if !keep_out.get(c.0 as usize, c.1 as usize) {
                    center = Some(c);
                    break;
                }
            }
            let Some(c) = center else { continue };
            decoys.push(c);
            let reach = (4.0 * major).ceil() as i64;
            let (st, ct) = theta.sin_cos();
            for y in (c.1 as i64 - reach).max(0)..=(c.1 as i64 + reach).min(h as i64 - 1) {
                for x in (c.0 as i64 - reach).max(0)..=(c.0 as i64 + reach).min(w as i64 - 1) {
                    let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
                    let (u, v) = (ct * dx + st * dy, -st * dx + ct * dy);
                    let e = (u / major).powi(2) + (v / sigma).powi(2);
                    let (xu, yu) = (x as usize, y as usize);
                    fl.set(xu, yu, fl.get(xu, yu) + amp * (-0.5 * e).exp());
                }
            }
        }
    }
    if fp.blur_sigma > 0.0 {
        fl = gaussian_blur(&fl, fp.blur_sigma);
    }

    let bf = add_noise(&bf, cfg.noise_sigma, &mut rng);
    let fl = add_noise(&fl, fp.noise_sigma, &mut frng);
    let annotations = worms
        .iter()
        .enumerate()
        .map(|(i, pw)| annotation_for(&pw.tube, i as u32 + 1))
        .collect();
    Ok(SynthScene {
        bf,
        fl,
        worm_masks,
        stripe_masks,
        stripe_side_a,
        annotations,
        track_mask,
        decoys,
        gain,
    })
}

fn add_noise(img: &GrayImage, sigma: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
        (img.get(x, y) + n).clamp(0.0, 1.0)
    })
}
