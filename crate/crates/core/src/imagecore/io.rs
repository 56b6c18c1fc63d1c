//! PGM / PNG reading and writing.
//!
//! Grayscale images load normalized by the container's maximum value (the
//! PGM `maxval`, or 255 / 65535 for 8- / 16-bit PNG).

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GrayImage, ImageError, Mask};

pub fn read_image(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = fs::read(path).map_err(|e| ImageError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(ImageError::Format("unrecognized image container".into()))
    }
}

/// Raw 16-bit samples of a PGM or PNG (8-bit data is widened, not rescaled),
/// along with the maxval.
pub fn decode_pgm_raw(bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u16>), ImageError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Format("bad PGM header field".into()))?;
    }
    // exactly one whitespace byte before the raster
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(ImageError::EmptyDimensions);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| ImageError::Format("truncated PGM raster".into()))?;
    let samples = if bps == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok((w, h, maxval as u32, samples))
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let (w, h, maxval, samples) = decode_pgm_raw(bytes)?;
    let m = maxval as f64;
    GrayImage::new(w, h, samples.into_iter().map(|s| (s as f64 / m).min(1.0)).collect())
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            GrayImage::new(w, h, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        image::DynamicImage::ImageLuma16(buf) => {
            GrayImage::new(w, h, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        other => Err(ImageError::Format(format!(
            "expected single-channel PNG, got {:?}",
            other.color()
        ))),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |e| ImageError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn encode_pgm(width: usize, height: usize, maxval: u16, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.iter().map(|&s| s as u8));
    } else {
        for &s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn quantize(v: f64, max: f64) -> u16 {
    (v.clamp(0.0, 1.0) * max).round() as u16
}

/// Write an image with values in `[0, 1]` as an 8- or 16-bit PGM.
pub fn write_pgm(path: &Path, img: &GrayImage, sixteen_bit: bool) -> Result<(), ImageError> {
    let maxval: u16 = if sixteen_bit { 65535 } else { 255 };
    let samples: Vec<u16> = img.data().iter().map(|&v| quantize(v, maxval as f64)).collect();
    write_bytes(path, &encode_pgm(img.width(), img.height(), maxval, &samples))
}

/// Masks are written as 8-bit PGM with foreground 255.
pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<(), ImageError> {
    let samples: Vec<u16> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_bytes(path, &encode_pgm(mask.width(), mask.height(), 255, &samples))
}

pub fn read_mask(path: &Path) -> Result<Mask, ImageError> {
    let img = read_image(path)?;
    Ok(img.to_mask(0.5))
}

/// 16-bit PGM of integer labels (0 = background).
pub fn write_label_pgm(path: &Path, width: usize, height: usize, labels: &[u16]) -> Result<(), ImageError> {
    let max = labels.iter().copied().max().unwrap_or(0).max(256);
    write_bytes(path, &encode_pgm(width, height, max.max(256), labels))
}

pub fn read_label_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>), ImageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, _, s) = decode_pgm_raw(&bytes)?;
    Ok((w, h, s))
}

/// Affine map from stored 16-bit intensity to score:
/// `score = offset + scale * intensity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMapSidecar {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub offset: f64,
    pub scale: f64,
}

pub const SCORE_MAP_FORMAT: &str = "score-map-u16/v1";

pub fn write_score_map(pgm_path: &Path, json_path: &Path, width: usize, height: usize, scores: &[f64]) -> Result<ScoreMapSidecar, ImageError> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 0.0 };
    let samples: Vec<u16> = scores
        .iter()
        .map(|&s| if scale > 0.0 { ((s - lo) / scale).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    write_bytes(pgm_path, &encode_pgm(width, height, 65535, &samples))?;
    let sidecar = ScoreMapSidecar {
        format: SCORE_MAP_FORMAT.into(),
        width,
        height,
        offset: lo,
        scale,
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| ImageError::Format(e.to_string()))?;
    write_bytes(json_path, &json)?;
    Ok(sidecar)
}

pub fn read_score_map(pgm_path: &Path, json_path: &Path) -> Result<(usize, usize, Vec<f64>), ImageError> {
    let side: ScoreMapSidecar = serde_json::from_slice(&fs::read(json_path).map_err(io_err(json_path))?)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    let (w, h, s) = read_label_pgm(pgm_path)?;
    Ok((w, h, s.into_iter().map(|v| side.offset + side.scale * v as f64).collect()))
}

/// 8-bit grayscale PNG of an image with values in `[0, 1]`.
pub fn encode_png8(img: &GrayImage) -> Result<Vec<u8>, ImageError> {
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| ImageError::Format("raster size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png16(path: &Path, img: &GrayImage) -> Result<(), ImageError> {
    let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v, 65535.0)).collect();
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .ok_or_else(|| ImageError::Format("raster size mismatch".into()))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageError::Format(e.to_string()))
}
