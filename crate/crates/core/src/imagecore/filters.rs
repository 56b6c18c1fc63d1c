//! Linear filters and the feature filter bank.
//!
//! All convolutions replicate edge pixels. Kernels are applied as true
//! convolutions, `out(x, y) = Σ k(i, j) · img(x − i, y − j)`.

use serde::{Deserialize, Serialize};

use super::quantile::nearest_rank;
use super::{GrayImage, ImageError};

/// Odd-sized square convolution kernel, row-major, indexed from `-r..=r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self, ImageError> {
        if size % 2 == 0 {
            return Err(ImageError::EvenKernel(size));
        }
        if weights.len() != size * size {
            return Err(ImageError::LengthMismatch {
                expected: size * size,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ImageError::NonFiniteKernel);
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Outer product `col ⊗ row` of two odd-length 1-D kernels of equal length.
    pub fn outer(col: &[f64], row: &[f64]) -> Result<Self, ImageError> {
        if col.len() != row.len() {
            return Err(ImageError::LengthMismatch {
                expected: col.len(),
                got: row.len(),
            });
        }
        let n = col.len();
        let mut w = Vec::with_capacity(n * n);
        for &c in col {
            for &r in row {
                w.push(c * r);
            }
        }
        Self::new(n, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(i, j)` with `i` horizontal, both in `-r..=r`.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let r = self.radius() as isize;
        self.weights[((j + r) as usize) * self.size + (i + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn convolve(img: &GrayImage, k: &Kernel) -> GrayImage {
    let r = k.radius() as isize;
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for j in -r..=r {
            for i in -r..=r {
                acc += k.at(i, j) * img.get_clamped(x as isize - i, y as isize - j);
            }
        }
        acc
    })
}

/// Convolution with the separable kernel `col ⊗ row` (horizontal pass first).
pub fn convolve_separable(img: &GrayImage, row: &[f64], col: &[f64]) -> GrayImage {
    let (w, h) = img.dims();
    let rr = (row.len() / 2) as isize;
    let rc = (col.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let src = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in row.iter().enumerate() {
                let i = t as isize - rr;
                let xx = (x as isize - i).clamp(0, w as isize - 1) as usize;
                acc += kv * src[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (t, &kv) in col.iter().enumerate() {
            let j = t as isize - rc;
            let yy = (y as isize - j).clamp(0, h as isize - 1) as usize;
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    GrayImage::new(w, h, out).expect("separable convolution preserves shape")
}

fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil().max(1.0) as usize
}

/// Normalized 1-D Gaussian (sums to 1).
pub fn gaussian_1d(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Second derivative of the 1-D Gaussian, adjusted to sum exactly to zero and
/// to give `Σ i² k(i) = 2` (the continuous second-moment identity).
pub fn gaussian_second_derivative_1d(sigma: f64) -> Vec<f64> {
    let g = gaussian_1d(sigma);
    let r = (g.len() / 2) as isize;
    let s2 = sigma * sigma;
    let mut d: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(i, &gv)| gv * ((i * i) as f64 - s2) / (s2 * s2))
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let m2: f64 = (-r..=r).zip(&d).map(|(i, &v)| (i * i) as f64 * v).sum();
    if m2.abs() > 1e-12 {
        d.iter_mut().for_each(|v| *v *= 2.0 / m2);
    }
    d
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let g = gaussian_1d(sigma);
    convolve_separable(img, &g, &g)
}

/// Scale-normalized Laplacian of Gaussian, `σ² ∇²G ∗ img`. Dark blobs give a
/// positive response, bright blobs a negative one.
pub fn laplacian_of_gaussian(img: &GrayImage, sigma: f64) -> GrayImage {
    let g = gaussian_1d(sigma);
    let d2 = gaussian_second_derivative_1d(sigma);
    let a = convolve_separable(img, &d2, &g);
    let b = convolve_separable(img, &g, &d2);
    let s2 = sigma * sigma;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| s2 * (x + y))
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same shape")
}

/// 2-D LoG kernel matching [`laplacian_of_gaussian`] (for reference use).
pub fn log_kernel(sigma: f64) -> Kernel {
    let g = gaussian_1d(sigma);
    let d2 = gaussian_second_derivative_1d(sigma);
    let n = g.len();
    let s2 = sigma * sigma;
    let mut w = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            w.push(s2 * (d2[i] * g[j] + g[i] * d2[j]));
        }
    }
    Kernel::new(n, w).expect("odd finite kernel")
}

const SOBEL_DERIV: [f64; 3] = [0.5, 0.0, -0.5];
const SOBEL_SMOOTH: [f64; 3] = [0.25, 0.5, 0.25];

/// Horizontal 3×3 Sobel derivative, normalized so a ramp of slope `a`
/// responds with `a`.
pub fn sobel_x(img: &GrayImage) -> GrayImage {
    convolve_separable(img, &SOBEL_DERIV, &SOBEL_SMOOTH)
}

pub fn sobel_y(img: &GrayImage) -> GrayImage {
    convolve_separable(img, &SOBEL_SMOOTH, &SOBEL_DERIV)
}

pub fn sobel_kernels() -> (Kernel, Kernel) {
    (
        Kernel::outer(&SOBEL_SMOOTH, &SOBEL_DERIV).expect("3x3"),
        Kernel::outer(&SOBEL_DERIV, &SOBEL_SMOOTH).expect("3x3"),
    )
}

pub fn sobel_magnitude(img: &GrayImage) -> GrayImage {
    let gx = sobel_x(img);
    let gy = sobel_y(img);
    let data = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same shape")
}

/// Nearest-rank percentile of the image intensities.
pub fn percentile(img: &GrayImage, p: f64) -> f64 {
    let mut v = img.data().to_vec();
    let k = nearest_rank(p, v.len());
    let (_, nth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *nth
}

/// Linear rescale sending the `lo_pct` percentile to 0 and the `hi_pct`
/// percentile to 1, clamped to `[0, 1]`. When the two percentiles coincide
/// every output pixel is 0.5.
pub fn contrast_adjust(img: &GrayImage, lo_pct: f64, hi_pct: f64) -> Result<GrayImage, ImageError> {
    if !(0.0..=1.0).contains(&lo_pct) || !(0.0..=1.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(ImageError::InvalidPercentiles { lo: lo_pct, hi: hi_pct });
    }
    let mut v = img.data().to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let lo = v[nearest_rank(lo_pct, v.len()) - 1];
    let hi = v[nearest_rank(hi_pct, v.len()) - 1];
    if hi <= lo {
        return Ok(GrayImage::filled(img.width(), img.height(), 0.5));
    }
    let span = hi - lo;
    Ok(img.map(|x| ((x - lo) / span).clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterBankConfig {
    pub log_sigmas: Vec<f64>,
    pub gaussian_sigma: f64,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    pub contrast_log_sigma: f64,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self {
            log_sigmas: vec![1.5, 3.0],
            gaussian_sigma: 2.0,
            contrast_lo: 0.01,
            contrast_hi: 0.99,
            contrast_log_sigma: 1.5,
        }
    }
}

/// What a filter-bank channel computes; used to pick quantization ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Intensity,
    Gradient,
    Laplacian,
}

#[derive(Clone, Debug)]
pub struct FilterResponse {
    pub name: String,
    pub kind: ChannelKind,
    pub image: GrayImage,
}

#[derive(Clone, Debug)]
pub struct FilterStack {
    pub source: GrayImage,
    pub responses: Vec<FilterResponse>,
}

impl FilterStack {
    pub fn get(&self, name: &str) -> Option<&GrayImage> {
        self.responses.iter().find(|r| r.name == name).map(|r| &r.image)
    }

    pub fn names(&self) -> Vec<&str> {
        self.responses.iter().map(|r| r.name.as_str()).collect()
    }
}

pub fn filter_bank(img: &GrayImage, cfg: &FilterBankConfig) -> Result<FilterStack, ImageError> {
    let contrast = contrast_adjust(img, cfg.contrast_lo, cfg.contrast_hi)?;
    let mut responses = vec![
        FilterResponse {
            name: "raw".into(),
            kind: ChannelKind::Intensity,
            image: img.clone(),
        },
        FilterResponse {
            name: "contrast".into(),
            kind: ChannelKind::Intensity,
            image: contrast.clone(),
        },
        FilterResponse {
            name: format!("gauss_{}", cfg.gaussian_sigma),
            kind: ChannelKind::Intensity,
            image: gaussian_blur(img, cfg.gaussian_sigma),
        },
        FilterResponse {
            name: "sobel".into(),
            kind: ChannelKind::Gradient,
            image: sobel_magnitude(img),
        },
    ];
    for &s in &cfg.log_sigmas {
        responses.push(FilterResponse {
            name: format!("log_{s}"),
            kind: ChannelKind::Laplacian,
            image: laplacian_of_gaussian(img, s),
        });
    }
    responses.push(FilterResponse {
        name: format!("contrast_log_{}", cfg.contrast_log_sigma),
        kind: ChannelKind::Laplacian,
        image: laplacian_of_gaussian(&contrast, cfg.contrast_log_sigma),
    });
    Ok(FilterStack {
        source: img.clone(),
        responses,
    })
}
