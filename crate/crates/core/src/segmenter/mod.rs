//! Worm detection in brightfield images: boosted oriented-segment scoring,
//! dense scan, thresholding and hard-negative mining.

mod annotation;
mod dense;
mod features;
mod threshold;
mod training;

use thiserror::Error;

pub use annotation::{
    distance_to_polyline, nearest_on_polyline, point_in_polygon, polyline_length, worm_union_mask, ImageAnnotations,
    Point, WormAnnotation,
};
pub use dense::{dense_score, dense_score_reference, dense_score_with, ScanGrid, ScoreImage};
pub use features::{
    angle_grid, segment_features, Channel, FeatureConfig, FeatureLayout, FeatureStack, Linear, QuantRange,
    QuantizationConfig, RectSpec, WormSegment, MAX_LEVEL, PAD_LEVEL,
};
pub use threshold::{
    calibrate_threshold, evaluate_segmentation, threshold_segment, Calibration, MismatchCounts, SegmentationMetrics,
    SegmentationResult,
};
pub use training::{
    generate_positives, generate_random_negatives, hard_negative_mine, train_segmenter, MinedNegative,
    SegmenterConfig, SegmenterModel, TrainingImage, TrainingRound,
};

use crate::boosting::BoostError;
use crate::imagecore::ImageError;

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("worm {worm_id}: {reason}")]
    InvalidAnnotation { worm_id: u32, reason: String },
    #[error("segment center ({x}, {y}) is outside the image")]
    OutsideImage { x: f64, y: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("mask and ground truth differ in size")]
    DimensionMismatch,
    #[error("ground truth mask is empty; mismatch is undefined")]
    EmptyGroundTruth,
    #[error("gave up drawing negatives after {attempts} attempts; the image is almost all worm")]
    TooManyRejections { attempts: usize },
    #[error("no positive training segments")]
    NoPositives,
}
