use serde::{Deserialize, Serialize};

use super::ImageError;

/// Row-major scalar raster. Intensities are stored as `f64`; images loaded
/// from disk are normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions);
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite {
                x: i % width,
                y: i / width,
            });
        }
        Ok(Self { width, height, data })
    }

    /// Panics on zero dimensions; intended for internally generated rasters.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating accessor.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy of the sub-rectangle `[x0, x0+w) × [y0, y0+h)`, clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, ImageError> {
        if x0 >= self.width || y0 >= self.height {
            return Err(ImageError::EmptyDimensions);
        }
        let w = w.min(self.width - x0);
        let h = h.min(self.height - y0);
        if w == 0 || h == 0 {
            return Err(ImageError::EmptyDimensions);
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn to_mask(&self, threshold: f64) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.data.iter().map(|&v| v > threshold).collect(),
        }
    }
}

/// Binary raster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions);
        }
        if bits.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                got: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// `true` if every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        let r = radius as isize;
        // Separable: horizontal then vertical max.
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = (x as isize - r).max(0) as usize;
                let hi = ((x as isize + r) as usize).min(w - 1);
                horiz[y * w + x] = (lo..=hi).any(|xx| self.bits[y * w + xx]);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = (y as isize - r).max(0) as usize;
            let hi = ((y as isize + r) as usize).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
            }
        }
        Mask {
            width: w,
            height: h,
            bits: out,
        }
    }
}
