//! Image containers, linear filters, rotated-rectangle quantiles and
//! connected components.

mod components;
mod filters;
mod image;
pub mod io;
mod quantile;

use thiserror::Error;

pub use components::{connected_components, trace_outline, BBox, Region};
pub use filters::{
    contrast_adjust, convolve, convolve_separable, filter_bank, gaussian_1d, gaussian_blur,
    gaussian_second_derivative_1d, laplacian_of_gaussian, log_kernel, percentile, sobel_kernels,
    sobel_magnitude, sobel_x, sobel_y, ChannelKind, FilterBankConfig, FilterResponse, FilterStack,
    Kernel,
};
pub use image::{GrayImage, Mask};
pub use quantile::{
    collect_rect_values, for_each_pixel_in, nearest_rank, normalize_angle, quantile_in_place,
    rect_quantile, OrientedRect, RectShape, MEMBERSHIP_SLACK,
};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1")]
    EmptyDimensions,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite pixel value at ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("kernel size {0} is not odd")]
    EvenKernel(usize),
    #[error("kernel weights must be finite")]
    NonFiniteKernel,
    #[error("percentiles must satisfy 0 <= lo < hi <= 1 (got {lo}, {hi})")]
    InvalidPercentiles { lo: f64, hi: f64 },
    #[error("quantile {0} outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("rectangle half extents must be positive and finite")]
    InvalidRect,
    #[error("rectangle does not cover any pixel of the image")]
    EmptyRegion,
    #[error("image format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
