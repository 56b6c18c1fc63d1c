use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::phenotype::Phenotype;

/// Fluorescent stripe appearance for one phenotype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeParams {
    /// Mean stripe intensity added on top of the diffuse body level.
    pub brightness: f64,
    /// Log-normal sigma of per-patch brightness.
    pub brightness_jitter: f64,
    /// Expected breaks per 100 px of stripe length.
    pub break_rate: f64,
    pub break_length: (f64, f64),
    /// Fraction of the half-width outside the lumen covered by each stripe.
    pub area_fraction: f64,
    /// Per-worm uniform perturbation of `area_fraction`.
    pub area_jitter: f64,
    /// Diffuse in-body fluorescence.
    pub diffuse: f64,
    /// Stripe span along the body, as fractions of body length.
    pub extent: (f64, f64),
}

impl Default for StripeParams {
    fn default() -> Self {
        StripeParams::for_phenotype(Phenotype::Wt)
    }
}

impl StripeParams {
    pub fn for_phenotype(p: Phenotype) -> Self {
        match p {
            Phenotype::Wt => StripeParams {
                brightness: 0.30,
                brightness_jitter: 0.20,
                break_rate: 0.6,
                break_length: (3.0, 6.0),
                area_fraction: 0.42,
                area_jitter: 0.03,
                diffuse: 0.12,
                extent: (0.15, 0.88),
            },
            Phenotype::Lnr => StripeParams {
                brightness: 0.13,
                brightness_jitter: 0.08,
                break_rate: 0.3,
                break_length: (3.0, 6.0),
                area_fraction: 0.26,
                area_jitter: 0.03,
                diffuse: 0.17,
                extent: (0.15, 0.88),
            },
            Phenotype::Hnr => StripeParams {
                brightness: 0.38,
                brightness_jitter: 0.40,
                break_rate: 1.8,
                break_length: (3.0, 6.0),
                area_fraction: 0.60,
                area_jitter: 0.03,
                diffuse: 0.07,
                extent: (0.15, 0.88),
            },
        }
    }

    fn validate(&self, name: &str) -> Result<(), SynthError> {
        positive(&format!("{name}.brightness"), self.brightness)?;
        non_negative(&format!("{name}.brightness_jitter"), self.brightness_jitter)?;
        non_negative(&format!("{name}.break_rate"), self.break_rate)?;
        range(&format!("{name}.break_length"), self.break_length, true)?;
        fraction(&format!("{name}.area_fraction"), self.area_fraction)?;
        non_negative(&format!("{name}.area_jitter"), self.area_jitter)?;
        non_negative(&format!("{name}.diffuse"), self.diffuse)?;
        range(&format!("{name}.extent"), self.extent, false)?;
        if self.extent.0 < 0.0 || self.extent.1 > 1.0 {
            return Err(SynthError::Config(format!("{name}.extent must lie in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeTable {
    pub wt: StripeParams,
    pub lnr: StripeParams,
    pub hnr: StripeParams,
}

impl Default for StripeTable {
    fn default() -> Self {
        StripeTable {
            wt: StripeParams::for_phenotype(Phenotype::Wt),
            lnr: StripeParams::for_phenotype(Phenotype::Lnr),
            hnr: StripeParams::for_phenotype(Phenotype::Hnr),
        }
    }
}

impl StripeTable {
    pub fn get(&self, p: Phenotype) -> &StripeParams {
        match p {
            Phenotype::Wt => &self.wt,
            Phenotype::Lnr => &self.lnr,
            Phenotype::Hnr => &self.hnr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluorParams {
    pub background: f64,
    pub noise_sigma: f64,
    /// Log-normal sigma of the per-well signal gain.
    pub gain_sigma: f64,
    pub blur_sigma: f64,
    /// Half-width of the dark lumen between the two stripes, px.
    pub lumen_half_gap: f64,
    /// Bright debris spots per worm, drawn uniformly from this range.
    pub decoys_per_worm: (usize, usize),
    pub decoy_sigma: (f64, f64),
    pub decoy_amplitude: (f64, f64),
    pub decoy_elongation: (f64, f64),
    /// Minimum distance from any worm, px.
    pub decoy_clearance: f64,
}

impl Default for FluorParams {
    fn default() -> Self {
        FluorParams {
            background: 0.04,
            noise_sigma: 0.006,
            gain_sigma: 0.35,
            blur_sigma: 0.7,
            lumen_half_gap: 1.0,
            decoys_per_worm: (0, 2),
            decoy_sigma: (1.5, 3.0),
            decoy_amplitude: (0.15, 0.45),
            decoy_elongation: (1.0, 2.5),
            decoy_clearance: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub worm_count: usize,
    pub worm_length: (f64, f64),
    pub worm_width: (f64, f64),
    pub amplitude: (f64, f64),
    pub period: (f64, f64),
    /// Largest fraction of a new worm that may cover already placed worms.
    pub max_overlap: f64,
    /// Worm bodies stay this far from the image border, px.
    pub margin: f64,
    pub placement_attempts: usize,
    pub track_count: usize,
    pub track_length: (f64, f64),
    /// Track darkening relative to worm darkening.
    pub track_contrast: (f64, f64),
    pub background: f64,
    /// Amplitude of slow background shading.
    pub texture: f64,
    pub worm_darkening: f64,
    pub rim_brightness: f64,
    pub rim_width: f64,
    pub vignette: f64,
    /// Blur sigma reached at the image corners.
    pub border_blur_sigma: f64,
    pub noise_sigma: f64,
    pub phenotype: Phenotype,
    pub stripes: StripeTable,
    pub fluor: FluorParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 320,
            height: 256,
            worm_count: 5,
            worm_length: (90.0, 150.0),
            worm_width: (12.0, 16.0),
            amplitude: (3.0, 10.0),
            period: (60.0, 140.0),
            max_overlap: 0.1,
            margin: 4.0,
            placement_attempts: 200,
            track_count: 4,
            track_length: (120.0, 300.0),
            track_contrast: (0.6, 1.1),
            background: 0.62,
            texture: 0.03,
            worm_darkening: 0.25,
            rim_brightness: 0.12,
            rim_width: 0.12,
            vignette: 0.30,
            border_blur_sigma: 3.0,
            noise_sigma: 0.015,
            phenotype: Phenotype::Wt,
            stripes: StripeTable::default(),
            fluor: FluorParams::default(),
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must be positive (got {v})")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must be non-negative (got {v})")))
    }
}

fn fraction(name: &str, v: f64) -> Result<(), SynthError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must lie in (0, 1) (got {v})")))
    }
}

fn range(name: &str, r: (f64, f64), strictly_positive: bool) -> Result<(), SynthError> {
    let ok = r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && if strictly_positive { r.0 > 0.0 } else { r.0 >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must be an ordered {} range (got {r:?})", if strictly_positive { "positive" } else { "non-negative" })))
    }
}

impl SynthConfig {
    pub fn with_phenotype(mut self, p: Phenotype) -> Self {
        self.phenotype = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stripe_params(&self) -> &StripeParams {
        self.stripes.get(self.phenotype)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 8 || self.height < 8 {
            return Err(SynthError::Config("image must be at least 8x8".into()));
        }
        range("worm_length", self.worm_length, true)?;
        range("worm_width", self.worm_width, true)?;
        range("amplitude", self.amplitude, false)?;
        range("period", self.period, true)?;
        range("track_length", self.track_length, true)?;
        range("track_contrast", self.track_contrast, true)?;
        non_negative("max_overlap", self.max_overlap)?;
        non_negative("margin", self.margin)?;
        if self.placement_attempts == 0 {
            return Err(SynthError::Config("placement_attempts must be positive".into()));
        }
        positive("background", self.background)?;
        non_negative("texture", self.texture)?;
        fraction("worm_darkening", self.worm_darkening)?;
        non_negative("rim_brightness", self.rim_brightness)?;
        positive("rim_width", self.rim_width)?;
        if !(0.0..1.0).contains(&self.vignette) {
            return Err(SynthError::Config(format!("vignette must lie in [0, 1) (got {})", self.vignette)));
        }
        non_negative("border_blur_sigma", self.border_blur_sigma)?;
        non_negative("noise_sigma", self.noise_sigma)?;
        if self.track_contrast.1 * self.worm_darkening >= 1.0 {
            return Err(SynthError::Config("track darkening must stay below 1".into()));
        }
        self.stripes.wt.validate("stripes.wt")?;
        self.stripes.lnr.validate("stripes.lnr")?;
        self.stripes.hnr.validate("stripes.hnr")?;
        let f = &self.fluor;
        non_negative("fluor.background", f.background)?;
        non_negative("fluor.noise_sigma", f.noise_sigma)?;
        non_negative("fluor.gain_sigma", f.gain_sigma)?;
        non_negative("fluor.blur_sigma", f.blur_sigma)?;
        positive("fluor.lumen_half_gap", f.lumen_half_gap)?;
        if f.decoys_per_worm.0 > f.decoys_per_worm.1 {
            return Err(SynthError::Config("fluor.decoys_per_worm must be ordered".into()));
        }
        range("fluor.decoy_sigma", f.decoy_sigma, true)?;
        range("fluor.decoy_amplitude", f.decoy_amplitude, true)?;
        range("fluor.decoy_elongation", f.decoy_elongation, true)?;
        if f.decoy_elongation.0 < 1.0 {
            return Err(SynthError::Config("fluor.decoy_elongation must be at least 1".into()));
        }
        non_negative("fluor.decoy_clearance", f.decoy_clearance)?;
        Ok(())
    }
}
