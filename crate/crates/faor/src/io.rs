//! Image containers and file I/O: 8/16-bit PNG, binary PPM, priors export.

use crate::error::{FaorError, Result};
use crate::geometry::{DistortionMap, ErpGrid};
use crate::resample::LatentGrid;
use crate::scalar::Scalar;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

/// An ERP pixel grid holding float values in [0, 1], 1 (gray) or 3 (RGB)
/// channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ErpImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FaorError::invalid("image dims must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(FaorError::invalid(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        if data.len() != height * width * channels {
            return Err(FaorError::ShapeMismatch {
                op: "ErpImage::new",
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FaorError::NonFinite { op: "ErpImage::new" });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, h: usize, w: usize) -> &[f32] {
        let base = (h * self.width + w) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn grid(&self) -> ErpGrid {
        ErpGrid::new(self.height, self.width).expect("image dims validated")
    }

    pub fn to_latent<T: Scalar>(&self) -> LatentGrid<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        LatentGrid::new(self.height, self.width, self.channels, data)
            .expect("image data validated")
    }

    /// Clamp latent values into [0, 1] and reinterpret as an image.
    pub fn from_latent<T: Scalar>(grid: &LatentGrid<T>) -> Result<Self> {
        let data = grid
            .data()
            .iter()
            .map(|&v| v.to_f64_lossy().clamp(0.0, 1.0) as f32)
            .collect();
        Self::new(grid.height(), grid.width(), grid.channels(), data)
    }
}

/// Round-half-up quantization of a [0, 1] float to an integer code.
fn quantize(v: f32, maxval: f64) -> u64 {
    ((v as f64).clamp(0.0, 1.0) * maxval + 0.5).floor() as u64
}

/// Load an 8/16-bit PNG or binary PPM into floats in [0, 1].
pub fn load_image(path: &Path) -> Result<ErpImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ppm" => load_ppm(path),
        "png" => load_png(path),
        other => Err(FaorError::Image(format!(
            "unsupported image format `.{other}` for {}",
            path.display()
        ))),
    }
}

fn load_png(path: &Path) -> Result<ErpImage> {
    let img = image::open(path).map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))?;
    use image::DynamicImage::*;
    let (h, w) = (img.height() as usize, img.width() as usize);
    match img {
        ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ErpImage::new(h, w, 1, data)
        }
        ImageLuma16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ErpImage::new(h, w, 1, data)
        }
        ImageRgb8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ErpImage::new(h, w, 3, data)
        }
        ImageRgb16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ErpImage::new(h, w, 3, data)
        }
        other => {
            // alpha and exotic layouts: convert through RGB8
            let buf = other.to_rgb8();
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ErpImage::new(h, w, 3, data)
        }
    }
}

/// Save as 8-bit PNG (`.png`) or 8-bit binary PPM (`.ppm`), rounding half-up.
pub fn save_image(img: &ErpImage, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ppm" => save_ppm(img, path, 255),
        "png" => save_png8(img, path),
        other => Err(FaorError::Image(format!(
            "unsupported image format `.{other}` for {}",
            path.display()
        ))),
    }
}

fn save_png8(img: &ErpImage, path: &Path) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let res = match img.channels {
        1 => image::GrayImage::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path),
        _ => image::RgbImage::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path),
    };
    res.map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))
}

/// Save as 16-bit PNG.
pub fn save_png16(img: &ErpImage, path: &Path) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let raw: Vec<u16> = img
        .data
        .iter()
        .map(|&v| quantize(v, 65535.0) as u16)
        .collect();
    let res = match img.channels {
        1 => image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path),
        _ => image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path),
    };
    res.map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))
}

fn save_ppm(img: &ErpImage, path: &Path, maxval: u16) -> Result<()> {
    if img.channels != 3 {
        return Err(FaorError::Image("PPM requires an RGB image".into()));
    }
    let mut out = Vec::with_capacity(img.data.len() * 2 + 32);
    out.extend_from_slice(format!("P6\n{} {}\n{}\n", img.width, img.height, maxval).as_bytes());
    if maxval <= 255 {
        out.extend(img.data.iter().map(|&v| quantize(v, maxval as f64) as u8));
    } else {
        for &v in &img.data {
            let q = quantize(v, maxval as f64) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn load_ppm(path: &Path) -> Result<ErpImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| FaorError::Image(format!("{}: {msg}", path.display()));
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    pos += 1; // single whitespace after maxval
    let n = w * h * 3;
    let data: Vec<f32> = if maxval <= 255 {
        if bytes.len() < pos + n {
            return Err(bad("truncated pixel data"));
        }
        bytes[pos..pos + n]
            .iter()
            .map(|&b| b as f32 / maxval as f32)
            .collect()
    } else {
        if bytes.len() < pos + 2 * n {
            return Err(bad("truncated pixel data"));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32)
            .collect()
    };
    ErpImage::new(h, w, 3, data)
}

/// Write a stretching-ratio map as an 8-bit grayscale PNG (values rounded to
/// the nearest integer).
pub fn save_distortion_png(map: &DistortionMap, path: &Path) -> Result<()> {
    let raw: Vec<u8> = map.values().iter().map(|&v| v.round() as u8).collect();
    image::GrayImage::from_raw(map.width() as u32, map.height() as u32, raw)
        .expect("sized buffer")
        .save(path)
        .map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))
}

/// Write a stretching-ratio map as row-major little-endian float32.
pub fn save_distortion_f32(map: &DistortionMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(map.values().len() * 4);
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read back a row-major little-endian float32 buffer.
pub fn load_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(FaorError::Image(format!(
            "{}: length not a multiple of 4",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Load an instance-segmentation map: 16-bit (or 8-bit) grayscale PNG of
/// instance ids, 0 = background.
pub fn load_segmentation(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let img = image::open(path).map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))?;
    let (h, w) = (img.height() as usize, img.width() as usize);
    let ids = match img {
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().iter().map(|&v| v as u32).collect()
        }
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().iter().map(|&v| v as u32).collect(),
        _ => {
            return Err(FaorError::Image(format!(
                "{}: segmentation map must be grayscale PNG",
                path.display()
            )))
        }
    };
    Ok((h, w, ids))
}

/// Save an instance-segmentation map as 16-bit grayscale PNG.
pub fn save_segmentation(height: usize, width: usize, ids: &[u32], path: &Path) -> Result<()> {
    if ids.len() != height * width {
        return Err(FaorError::ShapeMismatch {
            op: "save_segmentation",
            expected: vec![height, width],
            got: vec![ids.len()],
        });
    }
    if let Some(&big) = ids.iter().find(|&&v| v > 65535) {
        return Err(FaorError::invalid(format!(
            "instance id {big} exceeds 16-bit range"
        )));
    }
    let raw: Vec<u16> = ids.iter().map(|&v| v as u16).collect();
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, raw)
        .expect("sized buffer")
        .save(path)
        .map_err(|e| FaorError::Image(format!("{}: {e}", path.display())))
}

/// Write a loss-history CSV: `iteration,lr,loss` per row.
pub fn write_loss_csv(path: &Path, rows: &[(u64, f64, f64)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "iteration,lr,loss")?;
    for (it, lr, loss) in rows {
        writeln!(f, "{it},{lr},{loss}")?;
    }
    Ok(())
}
