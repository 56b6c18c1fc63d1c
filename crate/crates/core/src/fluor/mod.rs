//! Nile Red stripe detection in fluorescence images: LoG blobs, blob
//! features relative to the brightfield worm mask, and a boosted
//! stripe / non-stripe classifier.

mod blobs;
mod model;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use blobs::{
    blob_features, blob_response, detect_blobs, featurize, threshold_response, Blob, BlobConfig, ThresholdRule,
    BLOB_FEATURE_NAMES,
};
pub use model::{
    classify_stripes, export_stripes, label_blobs_from_mask, train_stripe_model, BlobLabel, StripeLabel, StripeLabelFile,
    StripeModel, StripeRecord, STRIPE_MODEL_FORMAT,
};

use crate::boosting::BoostError;

#[derive(Debug, Error)]
pub enum FluorError {
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("stripe model: {0}")]
    Format(String),
    #[error("label refers to unknown blob {0}")]
    UnknownBlob(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FluorError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FluorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::boosting::{AdaBoostConfig, Label, StumpEnsemble};
    use crate::imagecore::{GrayImage, Mask, Region};

    fn spot(w: usize, h: usize, c: (f64, f64), sigma: f64, amp: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let d2 = (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2);
            0.05 + amp * (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn constant_image_has_no_blobs() {
        let img = GrayImage::filled(40, 30, 0.3);
        assert!(detect_blobs(&img, &BlobConfig::default(), None, None).is_empty());
    }

    #[test]
    fn single_spot_gives_one_blob_at_the_peak() {
        let img = spot(64, 48, (30.0, 20.0), 3.0, 0.5);
        let blobs = detect_blobs(&img, &BlobConfig::default(), None, None);
        assert_eq!(blobs.len(), 1);
        assert!(blobs[0].region.contains(30, 20));
        assert!(blobs[0].boundary_contrast > 0.0);
        assert_eq!(blobs[0].max, img.get(30, 20));
    }

    // Union-find labeling, independent of the BFS in connected_components.
    fn union_find_sets(mask: &Mask) -> BTreeSet<Vec<(usize, usize)>> {
        let (w, h) = mask.dims();
        let mut parent: Vec<usize> = (0..w * h).collect();
        fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                for (dx, dy) in [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if mask.get_signed(nx, ny) {
                        let a = find(&mut parent, y * w + x);
                        let b = find(&mut parent, ny as usize * w + nx as usize);
                        parent[a] = b;
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let r = find(&mut parent, y * w + x);
                    groups.entry(r).or_default().push((x, y));
                }
            }
        }
        groups
            .into_values()
            .map(|mut v| {
                v.sort_by_key(|&(x, y)| (y, x));
                v
            })
            .collect()
    }

    #[test]
    fn blob_pixels_match_union_find_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let mut img = GrayImage::filled(60, 50, 0.05);
            for _ in 0..8 {
                let c = (rng.random_range(0.0..60.0), rng.random_range(0.0..50.0));
                let s = spot(60, 50, c, rng.random_range(1.5..4.0), rng.random_range(0.1..0.6));
                img = GrayImage::from_fn(60, 50, |x, y| img.get(x, y) + s.get(x, y) - 0.05);
            }
            let cfg = BlobConfig {
                min_area: 1,
                ..BlobConfig::default()
            };
            let mask = threshold_response(&blob_response(&img, cfg.sigma), &cfg.rule);
            let got: BTreeSet<Vec<(usize, usize)>> =
                detect_blobs(&img, &cfg, None, None).into_iter().map(|b| b.region.pixels).collect();
            assert_eq!(got, union_find_sets(&mask));
        }
    }

    #[test]
    fn additive_offset_does_not_move_blobs() {
        let img = spot(64, 48, (20.0, 25.0), 2.5, 0.4);
        let shifted = img.map(|v| v + 0.25);
        let a: Vec<_> = detect_blobs(&img, &BlobConfig::default(), None, None).into_iter().map(|b| b.region.pixels).collect();
        let b: Vec<_> = detect_blobs(&shifted, &BlobConfig::default(), None, None).into_iter().map(|b| b.region.pixels).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn disc_is_not_elongated_and_fully_inside_worm() {
        let (w, h) = (40, 40);
        let disc = |x: usize, y: usize| (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2) <= 64.0;
        let img = GrayImage::from_fn(w, h, |x, y| if disc(x, y) { 0.8 } else { 0.1 });
        let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| disc(x, y)).collect();
        let worm = Mask::from_fn(w, h, |x, y| (5..35).contains(&x) && (5..35).contains(&y));
        let b = featurize(0, Region::from_pixels(pixels), &img, 2, Some(&worm), None);
        assert!((b.elongation - 1.0).abs() < 1e-9, "{}", b.elongation);
        assert_eq!(b.worm_overlap, 1.0);
        assert_eq!(b.bbox_aspect, 1.0);
        assert!((b.boundary_contrast - 0.7).abs() < 1e-12);
        assert_eq!((b.q10, b.q50, b.q90), (0.8, 0.8, 0.8));
        assert!((b.mean - 0.8).abs() < 1e-12);
        assert_eq!(blob_features(&b).len(), BLOB_FEATURE_NAMES.len());
    }

    #[test]
    fn bar_is_elongated_along_its_axis() {
        let pixels: Vec<(usize, usize)> = (0..3).flat_map(|y| (0..30).map(move |x| (x + 5, y + 10))).collect();
        let img = GrayImage::filled(40, 20, 0.5);
        let b = featurize(0, Region::from_pixels(pixels), &img, 2, None, None);
        assert!(b.elongation > 8.0);
        assert!(b.orientation.abs() < 1e-9);
        assert_eq!(b.worm_overlap, 0.0);
    }

    fn toy_blobs(n: usize, seed: u64) -> Vec<(Blob, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = GrayImage::filled(30, 30, 0.2);
        let worm = Mask::from_fn(30, 30, |x, _| x < 15);
        (0..n)
            .map(|i| {
                let inside = i % 2 == 0;
                let x0 = if inside { rng.random_range(0..10) } else { rng.random_range(16..25) };
                let y0 = rng.random_range(0..25);
                let pixels: Vec<(usize, usize)> = (0..4).flat_map(|y| (0..4).map(move |x| (x0 + x, y0 + y))).collect();
                let b = featurize(i, Region::from_pixels(pixels), &img, 2, Some(&worm), None);
                (b, if inside { Label::Positive } else { Label::Negative })
            })
            .collect()
    }

    #[test]
    fn overlap_separable_blobs_train_in_one_round() {
        let data = toy_blobs(40, 3);
        let m = train_stripe_model(&data, &BlobConfig::default(), &AdaBoostConfig::with_rounds(1)).unwrap();
        assert_eq!(m.ensemble.stumps.len(), 1);
        assert_eq!(m.ensemble.stumps[0].feature_index, 9);
        for (b, l) in &data {
            assert_eq!(m.score(b) > 0.0, *l == Label::Positive);
        }
        let again = train_stripe_model(&data, &BlobConfig::default(), &AdaBoostConfig::with_rounds(1)).unwrap();
        assert_eq!(m, again);
        m.validate().unwrap();
    }

    #[test]
    fn classify_keeps_exactly_the_positive_scores() {
        let data = toy_blobs(30, 8);
        let blobs: Vec<Blob> = data.iter().map(|d| d.0.clone()).collect();
        let m = train_stripe_model(&data[..10], &BlobConfig::default(), &AdaBoostConfig::with_rounds(5)).unwrap();
        let kept = classify_stripes(&m, &blobs);
        let expect: Vec<Blob> = blobs.iter().filter(|b| m.score(b) > 0.0).cloned().collect();
        assert_eq!(kept, expect);
        assert!(classify_stripes(&m, &[]).is_empty());
        let empty = StripeModel::new(StumpEnsemble::empty(BLOB_FEATURE_NAMES.len()), BlobConfig::default());
        assert!(classify_stripes(&empty, &blobs).is_empty());
    }

    #[test]
    fn label_file_round_trip_and_toggle() {
        let data = toy_blobs(6, 1);
        let blobs: Vec<Blob> = data.iter().map(|d| d.0.clone()).collect();
        let labels: Vec<StripeLabel> = data
            .iter()
            .map(|d| if d.1 == Label::Positive { StripeLabel::Stripe } else { StripeLabel::Other })
            .collect();
        let f = StripeLabelFile::new("A01", &blobs, &labels);
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"stripe\"") && json.contains("\"other\""));
        let back: StripeLabelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        let pairs = back.pair(&blobs).unwrap();
        assert!(pairs.iter().zip(&data).all(|(p, d)| p.1 == d.1));
        assert_eq!(StripeLabel::Stripe.toggled().toggled(), StripeLabel::Stripe);
        let mut bad = back.clone();
        bad.blobs[0].blob_id = 99;
        assert!(bad.pair(&blobs).is_err());
    }
}
