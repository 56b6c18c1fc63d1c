use wormscreen::boosting::{AdaBoostConfig, Label};
use wormscreen::fluor::{detect_blobs, label_blobs_from_mask, train_stripe_model, Blob, BlobConfig};
use wormscreen::phenotype::Phenotype;
use wormscreen::synthplate::{synth_scene, SynthConfig};

const OVERLAP: f64 = 0.15;
const TRAIN_IMAGES: u64 = 60;
const HELD_OUT_IMAGES: u64 = 40;

fn labeled(seed: u64, p: Phenotype, cfg: &BlobConfig) -> Vec<(Blob, Label)> {
    let s = synth_scene(&SynthConfig::default().with_seed(seed).with_phenotype(p)).unwrap();
    let blobs = detect_blobs(&s.fl, cfg, Some(&s.worm_union()), None);
    let labels = label_blobs_from_mask(&blobs, &s.stripe_union(), OVERLAP);
    blobs.into_iter().zip(labels).collect()
}

#[test]
fn held_out_blob_accuracy_is_at_least_95_percent() {
    let cfg = BlobConfig::default();
    let mut train = Vec::new();
    for i in 0..TRAIN_IMAGES {
        train.extend(labeled(2000 + i, Phenotype::ALL[i as usize % 3], &cfg));
    }
    let model = train_stripe_model(&train, &cfg, &AdaBoostConfig::with_rounds(50)).unwrap();

    let (mut right, mut total, mut stripes, mut decoys) = (0, 0, 0, 0);
    for i in 0..HELD_OUT_IMAGES {
        for (b, truth) in labeled(6000 + i, Phenotype::ALL[i as usize % 3], &cfg) {
            let called = if model.score(&b) > 0.0 { Label::Positive } else { Label::Negative };
            right += usize::from(called == truth);
            total += 1;
            match truth {
                Label::Positive => stripes += 1,
                Label::Negative => decoys += 1,
            }
        }
    }
    assert!(stripes > 0 && decoys > 0, "held-out set needs both classes");
    let acc = right as f64 / total as f64;
    assert!(acc >= 0.95, "held-out accuracy {:.1}% over {total} blobs", 100.0 * acc);
}

#[test]
fn training_is_deterministic() {
    let cfg = BlobConfig::default();
    let data: Vec<_> = (0..3).flat_map(|i| labeled(2100 + i, Phenotype::Wt, &cfg)).collect();
    let boost = AdaBoostConfig::with_rounds(20);
    assert_eq!(train_stripe_model(&data, &cfg, &boost).unwrap(), train_stripe_model(&data, &cfg, &boost).unwrap());
}
