//! Quality metrics for ERP images: WS-PSNR and WS-SSIM with cosine-latitude
//! pixel weighting, plus unweighted PSNR as a sanity baseline.
//!
//! Values are compared on the BT.601 luminance channel after rounding to
//! 8-bit codes (the common SR evaluation convention); RGB mode is available
//! behind [`MetricOptions`].

use crate::error::{FaorError, Result};
use crate::geometry::cos_latitude_weight;
use crate::io::ErpImage;

/// PSNR values are capped here; a WS-MSE below `MSE_FLOOR` reports the cap.
pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, Copy)]
pub struct MetricOptions {
    /// Compare BT.601 luminance (default) instead of raw RGB channels.
    pub luminance: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { luminance: true }
    }
}

fn check_dims(op: &'static str, a: &ErpImage, b: &ErpImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(FaorError::ShapeMismatch {
            op,
            expected: vec![a.height(), a.width(), a.channels()],
            got: vec![b.height(), b.width(), b.channels()],
        });
    }
    Ok(())
}

fn to_8bit(v: f32) -> f64 {
    ((v as f64).clamp(0.0, 1.0) * 255.0 + 0.5).floor()
}

/// Luminance plane on the 0..255 scale, from 8-bit-rounded channels.
fn luminance_plane(img: &ErpImage) -> Vec<f64> {
    let n = img.height() * img.width();
    let mut out = Vec::with_capacity(n);
    if img.channels() == 1 {
        out.extend(img.data().iter().map(|&v| to_8bit(v)));
    } else {
        for px in img.data().chunks_exact(3) {
            out.push(0.299 * to_8bit(px[0]) + 0.587 * to_8bit(px[1]) + 0.114 * to_8bit(px[2]));
        }
    }
    out
}

fn mse_weighted(a: &ErpImage, b: &ErpImage, opts: MetricOptions, weighted: bool) -> Result<f64> {
    let grid = a.grid();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    if opts.luminance {
        let ya = luminance_plane(a);
        let yb = luminance_plane(b);
        let w = a.width();
        for h in 0..a.height() {
            let wt = if weighted {
                cos_latitude_weight(&grid, h)?
            } else {
                1.0
            };
            for x in 0..w {
                let d = ya[h * w + x] - yb[h * w + x];
                num += wt * d * d;
                den += wt;
            }
        }
    } else {
        let (w, c) = (a.width(), a.channels());
        for h in 0..a.height() {
            let wt = if weighted {
                cos_latitude_weight(&grid, h)?
            } else {
                1.0
            };
            for x in 0..w {
                for ch in 0..c {
                    let i = (h * w + x) * c + ch;
                    let d = to_8bit(a.data()[i]) - to_8bit(b.data()[i]);
                    num += wt * d * d;
                    den += wt;
                }
            }
        }
    }
    Ok(num / den)
}

fn mse_to_db(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Cosine-latitude-weighted PSNR in dB, capped at 99.
pub fn ws_psnr(a: &ErpImage, b: &ErpImage, peak: f64) -> Result<f64> {
    ws_psnr_opts(a, b, peak, MetricOptions::default())
}

pub fn ws_psnr_opts(a: &ErpImage, b: &ErpImage, peak: f64, opts: MetricOptions) -> Result<f64> {
    check_dims("ws_psnr", a, b)?;
    Ok(mse_to_db(mse_weighted(a, b, opts, true)?, peak))
}

/// Unweighted PSNR in dB, capped at 99.
pub fn psnr(a: &ErpImage, b: &ErpImage, peak: f64) -> Result<f64> {
    psnr_opts(a, b, peak, MetricOptions::default())
}

pub fn psnr_opts(a: &ErpImage, b: &ErpImage, peak: f64, opts: MetricOptions) -> Result<f64> {
    check_dims("psnr", a, b)?;
    Ok(mse_to_db(mse_weighted(a, b, opts, false)?, peak))
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - r;
            let dx = x as f64 - r;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            total += v;
        }
    }
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Structural similarity on luminance with per-row weights supplied by
/// `row_weight`, averaged over all valid (fully-windowed) positions.
pub fn ssim_with_weights(
    a: &ErpImage,
    b: &ErpImage,
    row_weight: impl Fn(usize) -> f64,
) -> Result<f64> {
    check_dims("ws_ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(FaorError::invalid(format!(
            "image {h}x{w} too small for the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let ya = luminance_plane(a);
    let yb = luminance_plane(b);
    let win = gaussian_window();
    let r = SSIM_WINDOW / 2;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for cy in r..h - r {
        let wt = row_weight(cy);
        for cx in r..w - r {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
            for wy in 0..SSIM_WINDOW {
                let row = (cy + wy - r) * w + cx - r;
                let wrow = &win[wy * SSIM_WINDOW..(wy + 1) * SSIM_WINDOW];
                for wx in 0..SSIM_WINDOW {
                    let g = wrow[wx];
                    let va = ya[row + wx];
                    let vb = yb[row + wx];
                    mu_a += g * va;
                    mu_b += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let var_a = saa - mu_a * mu_a;
            let var_b = sbb - mu_b * mu_b;
            let cov = sab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            num += wt * s;
            den += wt;
        }
    }
    Ok(num / den)
}

/// Cosine-latitude-weighted SSIM (11×11 Gaussian window, σ = 1.5, luminance).
pub fn ws_ssim(a: &ErpImage, b: &ErpImage) -> Result<f64> {
    let grid = a.grid();
    let weights: Vec<f64> = (0..a.height())
        .map(|h| cos_latitude_weight(&grid, h).expect("row in range"))
        .collect();
    ssim_with_weights(a, b, |h| weights[h])
}

/// Metrics of one image pair.
#[derive(Debug, Clone, Copy)]
pub struct PairMetrics {
    pub ws_psnr: f64,
    pub ws_ssim: f64,
    pub psnr: f64,
}

/// WS-PSNR, WS-SSIM and plain PSNR of a pair at peak 255.
pub fn evaluate_pair(a: &ErpImage, b: &ErpImage) -> Result<PairMetrics> {
    Ok(PairMetrics {
        ws_psnr: ws_psnr(a, b, 255.0)?,
        ws_ssim: ws_ssim(a, b)?,
        psnr: psnr(a, b, 255.0)?,
    })
}

/// Arithmetic means over a set of per-pair metrics.
pub fn aggregate(rows: &[PairMetrics]) -> Option<PairMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(PairMetrics {
        ws_psnr: rows.iter().map(|r| r.ws_psnr).sum::<f64>() / n,
        ws_ssim: rows.iter().map(|r| r.ws_ssim).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
    })
}
