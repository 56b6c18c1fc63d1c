//! Automated screening of *C. elegans* on agar: a boosted oriented-segment
//! worm detector for brightfield images, a Nile Red stripe detector for
//! fluorescence images, and a per-plate abstaining phenotype classifier.
//!
//! The synthetic plate generator in [`synthplate`] renders paired
//! brightfield / fluorescence wells with full ground truth.

pub mod boosting;
pub mod fluor;
pub mod imagecore;
pub mod segmenter;
pub mod phenotype;
pub mod synthplate;
