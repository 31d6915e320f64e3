//! Equirectangular-projection (ERP) grid geometry.
//!
//! An ERP image maps longitude to equally spaced columns and latitude to
//! equally spaced rows. Pixel (h, w) has its center at (h + 0.5, w + 0.5);
//! row 0 is the northernmost row (positive latitude), and column W wraps
//! back onto column 0 (the seam). Everything downstream — resampling,
//! priors, metrics — derives its coordinates from this module.

use crate::error::{FaorError, Result};
use std::f64::consts::{PI, TAU};

/// Dimensions of an ERP pixel grid. `width` spans a full 2π of longitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErpGrid {
    height: usize,
    width: usize,
}

impl ErpGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FaorError::invalid(format!(
                "ERP grid must have at least one row and column, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// A point on the unit sphere: latitude strictly inside (−π/2, π/2)
/// (pixel centers never sit on a pole), longitude normalized to [−π, π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    lat: f64,
    lon: f64,
}

impl SphericalCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(FaorError::invalid(format!(
                "non-finite spherical coordinate ({lat}, {lon})"
            )));
        }
        if lat <= -PI / 2.0 || lat >= PI / 2.0 {
            return Err(FaorError::invalid(format!(
                "latitude {lat} outside open interval (-pi/2, pi/2)"
            )));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Wrap a longitude into [−π, π).
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can land exactly on TAU's rounding edge; fold π back to −π.
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Spherical coordinate of a fractional pixel position.
///
/// `row` must lie in [0, H); `col` is wrapped modulo W across the seam.
/// Row/column r maps to latitude/longitude of the point at (r + 0.5) pixel
/// units from the top/left edge.
pub fn pixel_to_spherical(grid: &ErpGrid, row: f64, col: f64) -> Result<SphericalCoord> {
    if !row.is_finite() || !col.is_finite() {
        return Err(FaorError::invalid(format!(
            "non-finite pixel position ({row}, {col})"
        )));
    }
    let h = grid.height as f64;
    let w = grid.width as f64;
    if !(0.0..h).contains(&row) {
        return Err(FaorError::invalid(format!(
            "row {row} outside [0, {h})"
        )));
    }
    let lat = (0.5 - (row + 0.5) / h) * PI;
    let lon = ((col + 0.5) / w - 0.5) * TAU;
    SphericalCoord::new(lat, lon)
}

/// Fractional pixel position of a spherical coordinate; the exact inverse of
/// [`pixel_to_spherical`]. The returned column lies in [−0.5, W−0.5) — compare
/// columns modulo W.
pub fn spherical_to_pixel(grid: &ErpGrid, coord: &SphericalCoord) -> (f64, f64) {
    let h = grid.height as f64;
    let w = grid.width as f64;
    let row = (0.5 - coord.lat / PI) * h - 0.5;
    let col = (coord.lon / TAU + 0.5) * w - 0.5;
    (row, col)
}

/// Cosine-latitude weight of an integer row: cos((row + 0.5 − H/2)/H · π),
/// always in (0, 1]. Shared by the distortion map (×255) and the WS metrics.
pub fn cos_latitude_weight(grid: &ErpGrid, row: usize) -> Result<f64> {
    if row >= grid.height {
        return Err(FaorError::invalid(format!(
            "row {row} outside grid of height {}",
            grid.height
        )));
    }
    let h = grid.height as f64;
    Ok(((row as f64 + 0.5 - h / 2.0) / h * PI).cos())
}

/// Per-pixel sphere-to-planar stretching-ratio map: 255 · cos-latitude.
/// Row-constant, symmetric about the equator, maximal at the equator rows.
#[derive(Debug, Clone)]
pub struct DistortionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DistortionMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major H×W values, each in [0, 255].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Stretching-ratio map for a grid: value(h, w) = 255 · cos((h+0.5−H/2)/H · π).
pub fn distortion_map(grid: &ErpGrid) -> DistortionMap {
    let mut values = Vec::with_capacity(grid.n_pixels());
    for row in 0..grid.height {
        let v = 255.0 * cos_latitude_weight(grid, row).expect("row in range");
        values.extend(std::iter::repeat(v).take(grid.width));
    }
    DistortionMap {
        height: grid.height,
        width: grid.width,
        values,
    }
}

/// Pixel-center spherical coordinates of a resampled ERP lattice:
/// `lats` strictly decreasing north to south, `lons` strictly increasing.
#[derive(Debug, Clone)]
pub struct CoordGrid {
    lats: Vec<f64>,
    lons: Vec<f64>,
    scale: f64,
}

impl CoordGrid {
    /// Build from explicit coordinate arrays. Monotonicity and finiteness are
    /// validated; the length-vs-scale relation is the caller's contract.
    pub fn from_parts(lats: Vec<f64>, lons: Vec<f64>, scale: f64) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(FaorError::invalid("coordinate grid must be non-empty"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(FaorError::invalid(format!("scale {scale} must be positive")));
        }
        if lats.iter().any(|v| !v.is_finite()) || lons.iter().any(|v| !v.is_finite()) {
            return Err(FaorError::invalid("non-finite coordinate in grid"));
        }
        if lats.windows(2).any(|p| p[1] >= p[0]) {
            return Err(FaorError::invalid("latitudes must strictly decrease"));
        }
        if lons.windows(2).any(|p| p[1] <= p[0]) {
            return Err(FaorError::invalid("longitudes must strictly increase"));
        }
        Ok(Self { lats, lons, scale })
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn height(&self) -> usize {
        self.lats.len()
    }

    pub fn width(&self) -> usize {
        self.lons.len()
    }
}

/// Round half away from zero, the rule used for fractional output sizes.
pub fn round_dim(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Pixel-center coordinates of the round(s·H) × round(s·W) lattice obtained by
/// rescaling `grid` by `scale`. Both upscaling and downscaling are permitted.
pub fn hr_coordinate_grid(grid: &ErpGrid, scale: f64) -> Result<CoordGrid> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(FaorError::invalid(format!("scale {scale} must be positive")));
    }
    let out_h = round_dim(scale * grid.height as f64);
    let out_w = round_dim(scale * grid.width as f64);
    coord_lattice_with_scale(out_h, out_w, scale)
}

/// Pixel-center coordinates of an explicit out_h × out_w ERP lattice.
pub fn coord_lattice(out_h: usize, out_w: usize) -> Result<CoordGrid> {
    coord_lattice_with_scale(out_h, out_w, 1.0)
}

fn coord_lattice_with_scale(out_h: usize, out_w: usize, scale: f64) -> Result<CoordGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(FaorError::invalid(format!(
            "scale {scale} produces an empty {out_h}x{out_w} lattice"
        )));
    }
    let target = ErpGrid::new(out_h, out_w)?;
    let mut lats = Vec::with_capacity(out_h);
    for i in 0..out_h {
        lats.push(pixel_to_spherical(&target, i as f64, 0.0)?.lat());
    }
    let mut lons = Vec::with_capacity(out_w);
    for j in 0..out_w {
        lons.push(pixel_to_spherical(&target, 0.0, j as f64)?.lon());
    }
    CoordGrid::from_parts(lats, lons, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FRAC_PI_4: f64 = PI / 4.0;

    #[test]
    fn pixel_to_spherical_matches_convention() {
        let g = ErpGrid::new(2, 4).unwrap();
        let c = pixel_to_spherical(&g, 0.0, 0.0).unwrap();
        assert!((c.lat() - FRAC_PI_4).abs() < 1e-15);
        assert!((c.lon() - (-3.0 * PI / 4.0)).abs() < 1e-15);

        let center = pixel_to_spherical(&g, 0.5, 1.5).unwrap();
        assert!(center.lat().abs() < 1e-15);
        assert!(center.lon().abs() < 1e-15);

        let g = ErpGrid::new(512, 1024).unwrap();
        let center = pixel_to_spherical(&g, 255.5, 511.5).unwrap();
        assert!(center.lat().abs() < 1e-12);
        assert!(center.lon().abs() < 1e-12);
    }

    #[test]
    fn pixel_to_spherical_rejects_bad_rows() {
        let g = ErpGrid::new(2, 4).unwrap();
        assert!(pixel_to_spherical(&g, -0.1, 0.0).is_err());
        assert!(pixel_to_spherical(&g, 2.0, 0.0).is_err());
        assert!(pixel_to_spherical(&g, f64::NAN, 0.0).is_err());
        assert!(pixel_to_spherical(&g, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn longitude_wraps_modulo_width() {
        let g = ErpGrid::new(2, 4).unwrap();
        for col in [-5.0, -1.0, 0.25, 3.75, 7.25] {
            let a = pixel_to_spherical(&g, 0.0, col).unwrap();
            let b = pixel_to_spherical(&g, 0.0, col + 8.0).unwrap();
            assert!(
                (a.lon() - b.lon()).abs() < 1e-12,
                "col {col}: {} vs {}",
                a.lon(),
                b.lon()
            );
        }
    }

    #[test]
    fn spherical_to_pixel_inverts() {
        let g = ErpGrid::new(2, 4).unwrap();
        let (row, col) = spherical_to_pixel(&g, &SphericalCoord::new(FRAC_PI_4, -3.0 * PI / 4.0).unwrap());
        assert!(row.abs() < 1e-12);
        assert!(col.abs() < 1e-12);
        let (row, col) = spherical_to_pixel(&g, &SphericalCoord::new(0.0, 0.0).unwrap());
        assert!((row - 0.5).abs() < 1e-12);
        assert!((col - 1.5).abs() < 1e-12);
    }

    #[test]
    fn distortion_map_values() {
        let g = ErpGrid::new(2, 4).unwrap();
        let m = distortion_map(&g);
        let expected = 255.0 * FRAC_PI_4.cos();
        assert!((expected - 180.312).abs() < 1e-3);
        for v in m.values() {
            assert!((v - expected).abs() < 1e-12);
        }

        let g = ErpGrid::new(4, 2).unwrap();
        let m = distortion_map(&g);
        // independent evaluation: 255*cos(3*pi/8)
        let expected_h0 = 255.0 * (3.0 * PI / 8.0).cos();
        assert!((expected_h0 - 97.585).abs() < 1e-3);
        assert!((m.value(0, 0) - expected_h0).abs() < 1e-12);
        assert!((m.value(3, 1) - expected_h0).abs() < 1e-12);
    }

    #[test]
    fn distortion_map_invariants() {
        for h in [2usize, 5, 8, 9] {
            let g = ErpGrid::new(h, 3).unwrap();
            let m = distortion_map(&g);
            for row in 0..h {
                // row-constant
                assert_eq!(m.value(row, 0), m.value(row, 1));
                assert_eq!(m.value(row, 0), m.value(row, 2));
                // equator symmetry
                assert_eq!(m.value(row, 0), m.value(h - 1 - row, 0));
                // equals 255 * cos weight exactly
                assert_eq!(m.value(row, 0), 255.0 * cos_latitude_weight(&g, row).unwrap());
            }
            // strictly decreasing from the equator rows toward both poles
            // (for even H the two middle rows are equal by symmetry)
            for row in 0..(h - 1) / 2 {
                assert!(m.value(row, 0) < m.value(row + 1, 0));
            }
            let max = m.values().iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(m.value((h - 1) / 2, 0), max);
            assert_eq!(m.value(h / 2, 0), max);
        }
    }

    #[test]
    fn cos_weight_examples() {
        let g = ErpGrid::new(2, 4).unwrap();
        assert!((cos_latitude_weight(&g, 0).unwrap() - 0.70711).abs() < 1e-5);
        let g = ErpGrid::new(4, 4).unwrap();
        let expected = [
            (3.0 * PI / 8.0).cos(),
            (PI / 8.0).cos(),
            (PI / 8.0).cos(),
            (3.0 * PI / 8.0).cos(),
        ];
        for (row, e) in expected.iter().enumerate() {
            assert!((cos_latitude_weight(&g, row).unwrap() - e).abs() < 1e-15);
        }
        // equator-adjacent row of any even H
        for h in [2usize, 8, 64] {
            let g = ErpGrid::new(h, 1).unwrap();
            let w = cos_latitude_weight(&g, h / 2).unwrap();
            assert!((w - (0.5 * PI / h as f64).cos()).abs() < 1e-15);
        }
        assert!(cos_latitude_weight(&ErpGrid::new(2, 2).unwrap(), 2).is_err());
    }

    #[test]
    fn hr_grid_identity_scale_matches_source() {
        let g = ErpGrid::new(2, 4).unwrap();
        let cg = hr_coordinate_grid(&g, 1.0).unwrap();
        assert_eq!(cg.height(), 2);
        assert_eq!(cg.width(), 4);
        for (i, lat) in cg.lats().iter().enumerate() {
            let src = pixel_to_spherical(&g, i as f64, 0.0).unwrap();
            assert_eq!(*lat, src.lat());
        }
        for (j, lon) in cg.lons().iter().enumerate() {
            let src = pixel_to_spherical(&g, 0.0, j as f64).unwrap();
            assert_eq!(*lon, src.lon());
        }
    }

    #[test]
    fn hr_grid_scale_two() {
        let g = ErpGrid::new(2, 4).unwrap();
        let cg = hr_coordinate_grid(&g, 2.0).unwrap();
        assert_eq!(cg.height(), 4);
        for (h, lat) in cg.lats().iter().enumerate() {
            let expected = (0.5 - (h as f64 + 0.5) / 4.0) * PI;
            assert!((lat - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn hr_grid_fractional_rounding() {
        let g = ErpGrid::new(64, 128).unwrap();
        let cg = hr_coordinate_grid(&g, 3.7).unwrap();
        assert_eq!(cg.height(), 237);
        assert_eq!(cg.width(), 474);
        assert!(hr_coordinate_grid(&g, 1e-9).is_err());
    }

    #[test]
    fn coord_grid_validates_monotonicity() {
        assert!(CoordGrid::from_parts(vec![0.1, 0.2], vec![0.0, 1.0], 1.0).is_err());
        assert!(CoordGrid::from_parts(vec![0.2, 0.1], vec![1.0, 0.0], 1.0).is_err());
        assert!(CoordGrid::from_parts(vec![0.2, 0.1], vec![0.0, 1.0], 1.0).is_ok());
    }
}
