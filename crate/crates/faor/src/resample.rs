//! Arbitrary-scale resampling of grids on the sphere.
//!
//! The geodesic resampler interpolates the four bracketing samples with
//! spherical-linear weights sin((1−t)δ)/sin δ and sin(tδ)/sin δ, where δ is
//! the coordinate angle subtended by adjacent samples (longitude spacing
//! within a row, latitude spacing across rows) — not the angle between the
//! feature vectors. Bilinear and Catmull-Rom bicubic planar baselines share
//! the same seam-wrap and pole-clamp logic.
//!
//! All resamplers are linear operators; per-target computations are
//! independent, so row-parallel execution is bit-identical to sequential.

use crate::error::{FaorError, Result};
use crate::geometry::{CoordGrid, ErpGrid, SphericalCoord};
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::f64::consts::{PI, TAU};

/// Below this angle the sin-weight ratio loses precision; the slerp switches
/// to its analytic limit (1−t, t). The two branches agree to ~1e-12 at the
/// threshold.
pub const DEGENERATE_DELTA: f64 = 1e-6;

/// Fractional pixel positions this close to an integer are snapped onto it,
/// so targets that are analytically at a source pixel center resolve to an
/// exact identity even after a lossy coordinate round trip.
const SNAP_EPS: f64 = 1e-7;

/// Dense H×W×D grid of feature vectors (a pixel grid is the D=3 case).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<T: Scalar> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> LatentGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(FaorError::invalid(format!(
                "latent grid dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(FaorError::ShapeMismatch {
                op: "LatentGrid::new",
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FaorError::NonFinite {
                op: "LatentGrid::new",
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    data.push(f(h, w, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> T {
        self.data[(h * self.width + w) * self.channels + c]
    }

    pub fn pixel(&self, h: usize, w: usize) -> &[T] {
        let base = (h * self.width + w) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// Rotate columns left by `k`: output (h, w) = input (h, (w + k) mod W).
    pub fn rotate_cols(&self, k: usize) -> Self {
        let mut out = Self::zeros(self.height, self.width, self.channels);
        for h in 0..self.height {
            for w in 0..self.width {
                let src = (w + k) % self.width;
                let dst_base = (h * self.width + w) * self.channels;
                out.data[dst_base..dst_base + self.channels].copy_from_slice(self.pixel(h, src));
            }
        }
        out
    }
}

/// One interpolation segment: the angle `delta` subtended by the two
/// reference samples and the fractional position `t` of the target within it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlerpSegment {
    delta: f64,
    t: f64,
}

impl SlerpSegment {
    pub fn new(delta: f64, t: f64) -> Result<Self> {
        if !delta.is_finite() || !t.is_finite() {
            return Err(FaorError::invalid("non-finite slerp segment"));
        }
        if !(0.0..=PI).contains(&delta) {
            return Err(FaorError::invalid(format!("delta {delta} outside [0, pi]")));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(FaorError::invalid(format!("t {t} outside [0, 1]")));
        }
        Ok(Self { delta, t })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn degenerate(&self) -> bool {
        self.delta < DEGENERATE_DELTA
    }

    /// Interpolation weights (w_a, w_b). Degenerate segments use the linear
    /// limit; otherwise the sin-ratio weights, which do not sum to 1 for
    /// finite delta (no renormalization is applied).
    pub fn weights(&self) -> (f64, f64) {
        if self.degenerate() {
            (1.0 - self.t, self.t)
        } else {
            let s = self.delta.sin();
            (
                ((1.0 - self.t) * self.delta).sin() / s,
                (self.t * self.delta).sin() / s,
            )
        }
    }
}

/// Spherical linear interpolation of two feature vectors.
pub fn slerp_pair<T: Scalar>(z_a: &[T], z_b: &[T], seg: &SlerpSegment) -> Result<Vec<T>> {
    if z_a.len() != z_b.len() {
        return Err(FaorError::ShapeMismatch {
            op: "slerp_pair",
            expected: vec![z_a.len()],
            got: vec![z_b.len()],
        });
    }
    if z_a.iter().chain(z_b.iter()).any(|v| !v.is_finite()) {
        return Err(FaorError::NonFinite { op: "slerp_pair" });
    }
    let (wa, wb) = seg.weights();
    let wa = T::from_f64(wa);
    let wb = T::from_f64(wb);
    Ok(z_a
        .iter()
        .zip(z_b.iter())
        .map(|(&a, &b)| wa * a + wb * b)
        .collect())
}

/// The four source samples bracketing a target: `p0`,`p1` share the northern
/// row, `p2`,`p3` the southern row; columns wrap across the seam and
/// latitudes beyond the edge row centers clamp to the edge row.
#[derive(Debug, Clone, Copy)]
pub struct NeighborSet {
    pub p0: (usize, usize),
    pub p1: (usize, usize),
    pub p2: (usize, usize),
    pub p3: (usize, usize),
    pub seg01: SlerpSegment,
    pub seg23: SlerpSegment,
    pub seg02: SlerpSegment,
}

/// Which interpolation kernel a resampling call uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResamplerKind {
    Geodesic,
    Bilinear,
    Bicubic,
}

impl ResamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(Self::Geodesic),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(FaorError::invalid(format!(
                "unknown resampler `{other}` (expected geodesic|bilinear|bicubic)"
            ))),
        }
    }
}

/// Uniform lat/lon sampling frame of a grid: the full ERP frame (seam-wrapped
/// columns) or a rectangular window of one (training patches).
#[derive(Debug, Clone, Copy)]
pub struct GridFrame {
    height: usize,
    width: usize,
    lat0: f64,
    dlat: f64,
    lon0: f64,
    dlon: f64,
    wrap_cols: bool,
}

impl GridFrame {
    /// Frame of a full ERP grid: rows span π of latitude, columns 2π of
    /// longitude with seam wrap.
    pub fn erp(grid: &ErpGrid) -> Self {
        let h = grid.height() as f64;
        let w = grid.width() as f64;
        Self {
            height: grid.height(),
            width: grid.width(),
            lat0: (0.5 - 0.5 / h) * PI,
            dlat: PI / h,
            lon0: (0.5 / w - 0.5) * TAU,
            dlon: TAU / w,
            wrap_cols: true,
        }
    }

    /// Frame from explicit row-0/col-0 center coordinates and spacings.
    /// `dlat` > 0 means latitude decreases with increasing row index.
    pub fn from_centers(
        height: usize,
        width: usize,
        lat0: f64,
        dlat: f64,
        lon0: f64,
        dlon: f64,
        wrap_cols: bool,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FaorError::invalid("frame dims must be positive"));
        }
        if !(dlat.is_finite() && dlat > 0.0 && dlon.is_finite() && dlon > 0.0) {
            return Err(FaorError::invalid("frame spacings must be positive"));
        }
        if !lat0.is_finite() || !lon0.is_finite() {
            return Err(FaorError::invalid("non-finite frame origin"));
        }
        Ok(Self {
            height,
            width,
            lat0,
            dlat,
            lon0,
            dlon,
            wrap_cols,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn wrap_cols(&self) -> bool {
        self.wrap_cols
    }

    /// Latitude of the center of row `i`.
    pub fn row_latitude(&self, i: usize) -> f64 {
        self.lat0 - i as f64 * self.dlat
    }

    /// Longitude of the center of column `j`.
    pub fn col_longitude(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }

    /// Fractional row position of a latitude.
    pub fn row_position(&self, lat: f64) -> f64 {
        (self.lat0 - lat) / self.dlat
    }

    /// Fractional column position of a longitude (not yet wrapped).
    pub fn col_position(&self, lon: f64) -> f64 {
        (lon - self.lon0) / self.dlon
    }

    /// Bracketing samples and segments for a spherical target.
    pub fn neighbor_set(&self, target: &SphericalCoord) -> NeighborSet {
        let (r0, r1, tlat) = axis_pos(self.row_position(target.lat()), self.height, false);
        let (c0, c1, tlon) = axis_pos(self.col_position(target.lon()), self.width, self.wrap_cols);
        let dlon = if c1 == c0 { 0.0 } else { self.dlon };
        let dlat = if r1 == r0 { 0.0 } else { self.dlat };
        let seg_lon = SlerpSegment { delta: dlon, t: tlon };
        NeighborSet {
            p0: (r0, c0),
            p1: (r0, c1),
            p2: (r1, c0),
            p3: (r1, c1),
            seg01: seg_lon,
            seg23: seg_lon,
            seg02: SlerpSegment { delta: dlat, t: tlat },
        }
    }

    /// Interpolation taps (source pixel + weight) for one target coordinate.
    /// Four taps for geodesic/bilinear, sixteen for bicubic.
    pub fn taps(&self, kind: ResamplerKind, lat: f64, lon: f64, out: &mut Vec<Tap>) {
        out.clear();
        let row_f = self.row_position(lat);
        let col_f = self.col_position(lon);
        self.taps_at_pixel(kind, row_f, col_f, out);
    }

    /// Same as [`GridFrame::taps`], but for a fractional pixel-space target.
    pub fn taps_at_pixel(&self, kind: ResamplerKind, row_f: f64, col_f: f64, out: &mut Vec<Tap>) {
        out.clear();
        match kind {
            ResamplerKind::Geodesic | ResamplerKind::Bilinear => {
                let (r0, r1, tlat) = axis_pos(row_f, self.height, false);
                let (c0, c1, tlon) = axis_pos(col_f, self.width, self.wrap_cols);
                let (wlat, wlon) = if kind == ResamplerKind::Geodesic {
                    (
                        seg_weights(if r1 == r0 { 0.0 } else { self.dlat }, tlat),
                        seg_weights(if c1 == c0 { 0.0 } else { self.dlon }, tlon),
                    )
                } else {
                    ((1.0 - tlat, tlat), (1.0 - tlon, tlon))
                };
                out.push(Tap::new(r0, c0, wlat.0 * wlon.0));
                out.push(Tap::new(r0, c1, wlat.0 * wlon.1));
                out.push(Tap::new(r1, c0, wlat.1 * wlon.0));
                out.push(Tap::new(r1, c1, wlat.1 * wlon.1));
            }
            ResamplerKind::Bicubic => {
                let (rows, tlat) = axis_pos_cubic(row_f, self.height, false);
                let (cols, tlon) = axis_pos_cubic(col_f, self.width, self.wrap_cols);
                let wr = catmull_rom_weights(tlat);
                let wc = catmull_rom_weights(tlon);
                for (i, &r) in rows.iter().enumerate() {
                    for (j, &c) in cols.iter().enumerate() {
                        out.push(Tap::new(r, c, wr[i] * wc[j]));
                    }
                }
            }
        }
    }
}

/// One source sample and its interpolation weight.
#[derive(Debug, Clone, Copy)]
pub struct Tap {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

impl Tap {
    fn new(row: usize, col: usize, weight: f64) -> Self {
        Self { row, col, weight }
    }
}

fn seg_weights(delta: f64, t: f64) -> (f64, f64) {
    if delta < DEGENERATE_DELTA {
        (1.0 - t, t)
    } else {
        let s = delta.sin();
        (((1.0 - t) * delta).sin() / s, (t * delta).sin() / s)
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP_EPS {
        r
    } else {
        x
    }
}

/// Bracketing indices and fractional offset along one axis. Wrapping axes
/// fold modulo `len` (seam); clamping axes collapse out-of-range targets onto
/// the edge sample with t = 0.
fn axis_pos(x: f64, len: usize, wrap: bool) -> (usize, usize, f64) {
    let x = snap(x);
    if len == 1 {
        return (0, 0, 0.0);
    }
    if wrap {
        let lenf = len as f64;
        let mut xw = x.rem_euclid(lenf);
        if xw >= lenf {
            xw -= lenf;
        }
        let i0 = (xw.floor() as usize).min(len - 1);
        let t = xw - i0 as f64;
        (i0, (i0 + 1) % len, t)
    } else {
        if x <= 0.0 {
            return (0, 0, 0.0);
        }
        let max = (len - 1) as f64;
        if x >= max {
            return (len - 1, len - 1, 0.0);
        }
        let i0 = x.floor() as usize;
        (i0, i0 + 1, x - i0 as f64)
    }
}

/// Four-sample neighborhood for the cubic kernel along one axis.
fn axis_pos_cubic(x: f64, len: usize, wrap: bool) -> ([usize; 4], f64) {
    let x = snap(x);
    let (base, t) = if wrap {
        let lenf = len as f64;
        let mut xw = x.rem_euclid(lenf);
        if xw >= lenf {
            xw -= lenf;
        }
        let b = (xw.floor() as isize).min(len as isize - 1);
        (b, xw - b as f64)
    } else if x <= 0.0 {
        (0, 0.0)
    } else if x >= (len - 1) as f64 {
        (len as isize - 1, 0.0)
    } else {
        let b = x.floor() as isize;
        (b, x - b as f64)
    };
    let idx = |k: isize| -> usize {
        let i = base + k;
        if wrap {
            (i.rem_euclid(len as isize)) as usize
        } else {
            i.clamp(0, len as isize - 1) as usize
        }
    };
    ([idx(-1), idx(0), idx(1), idx(2)], t)
}

/// Catmull-Rom weights (a = −0.5) for offsets −1..2 at fraction `t`.
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (-t3 + 2.0 * t2 - t) / 2.0,
        (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0,
        (-3.0 * t3 + 4.0 * t2 + t) / 2.0,
        (t3 - t2) / 2.0,
    ]
}

/// The four bracketing source samples of a target on a full ERP grid.
pub fn find_neighbors(src: &ErpGrid, target: &SphericalCoord) -> NeighborSet {
    GridFrame::erp(src).neighbor_set(target)
}

fn check_grid_frame<T: Scalar>(grid: &LatentGrid<T>, frame: &GridFrame, op: &'static str) -> Result<()> {
    if grid.height() != frame.height() || grid.width() != frame.width() {
        return Err(FaorError::ShapeMismatch {
            op,
            expected: vec![frame.height(), frame.width()],
            got: vec![grid.height(), grid.width()],
        });
    }
    Ok(())
}

/// Resample a grid at every coordinate of `targets` within an arbitrary frame.
pub fn resample_frame<T: Scalar>(
    grid: &LatentGrid<T>,
    frame: &GridFrame,
    targets: &CoordGrid,
    kind: ResamplerKind,
) -> Result<LatentGrid<T>> {
    check_grid_frame(grid, frame, "resample")?;
    let (out_h, out_w, ch) = (targets.height(), targets.width(), grid.channels());
    let mut out = vec![T::zero(); out_h * out_w * ch];
    let row_size = out_w * ch;
    out.par_chunks_mut(row_size)
        .enumerate()
        .for_each(|(i, out_row)| {
            let lat = targets.lats()[i];
            let mut taps = Vec::with_capacity(16);
            for (j, &lon) in targets.lons().iter().enumerate() {
                frame.taps(kind, lat, lon, &mut taps);
                let dst = &mut out_row[j * ch..(j + 1) * ch];
                for tap in &taps {
                    let w = T::from_f64(tap.weight);
                    let src = grid.pixel(tap.row, tap.col);
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d = *d + w * s;
                    }
                }
            }
        });
    LatentGrid::new(out_h, out_w, ch, out)
}

/// Geodesic (slerp-weighted) resampling of a full ERP grid.
pub fn geodesic_resample<T: Scalar>(
    grid: &LatentGrid<T>,
    src: &ErpGrid,
    targets: &CoordGrid,
) -> Result<LatentGrid<T>> {
    resample_frame(grid, &GridFrame::erp(src), targets, ResamplerKind::Geodesic)
}

/// Separable linear resampling with seam wrap and pole clamp.
pub fn bilinear_resample<T: Scalar>(
    grid: &LatentGrid<T>,
    src: &ErpGrid,
    targets: &CoordGrid,
) -> Result<LatentGrid<T>> {
    resample_frame(grid, &GridFrame::erp(src), targets, ResamplerKind::Bilinear)
}

/// Separable Catmull-Rom resampling with seam wrap and pole clamp. Also the
/// downsampler used to build training pairs.
pub fn bicubic_resample<T: Scalar>(
    grid: &LatentGrid<T>,
    src: &ErpGrid,
    targets: &CoordGrid,
) -> Result<LatentGrid<T>> {
    resample_frame(grid, &GridFrame::erp(src), targets, ResamplerKind::Bicubic)
}

/// Pixel-space bicubic resize: output center (i, j) samples input position
/// ((i+0.5)·H/out_h − 0.5, (j+0.5)·W/out_w − 0.5). Columns wrap when
/// `wrap_cols` (full ERP images), otherwise clamp (window crops).
pub fn resize_bicubic<T: Scalar>(
    grid: &LatentGrid<T>,
    out_h: usize,
    out_w: usize,
    wrap_cols: bool,
) -> Result<LatentGrid<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(FaorError::invalid("resize target must be non-empty"));
    }
    let frame = GridFrame {
        height: grid.height(),
        width: grid.width(),
        lat0: 0.0,
        dlat: 1.0,
        lon0: 0.0,
        dlon: 1.0,
        wrap_cols,
    };
    let ch = grid.channels();
    let sy = grid.height() as f64 / out_h as f64;
    let sx = grid.width() as f64 / out_w as f64;
    let mut out = vec![T::zero(); out_h * out_w * ch];
    let row_size = out_w * ch;
    out.par_chunks_mut(row_size)
        .enumerate()
        .for_each(|(i, out_row)| {
            let row_f = (i as f64 + 0.5) * sy - 0.5;
            let mut taps = Vec::with_capacity(16);
            for j in 0..out_w {
                let col_f = (j as f64 + 0.5) * sx - 0.5;
                frame.taps_at_pixel(ResamplerKind::Bicubic, row_f, col_f, &mut taps);
                let dst = &mut out_row[j * ch..(j + 1) * ch];
                for tap in &taps {
                    let w = T::from_f64(tap.weight);
                    let src = grid.pixel(tap.row, tap.col);
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d = *d + w * s;
                    }
                }
            }
        });
    LatentGrid::new(out_h, out_w, ch, out)
}

/// Precompiled taps for a list of scattered targets (flat source indices),
/// consumed by the differentiable gather in the model.
#[derive(Debug, Clone)]
pub struct CompiledTaps {
    n_sources: usize,
    offsets: Vec<u32>,
    taps: Vec<(u32, f64)>,
}

impl CompiledTaps {
    pub fn n_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    /// Taps of target `i` as (flat source pixel index, weight).
    pub fn target(&self, i: usize) -> &[(u32, f64)] {
        &self.taps[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// Compile per-target taps for scattered spherical coordinates in a frame.
pub fn compile_taps(
    frame: &GridFrame,
    kind: ResamplerKind,
    coords: &[SphericalCoord],
) -> CompiledTaps {
    let mut offsets = Vec::with_capacity(coords.len() + 1);
    let mut taps_out = Vec::with_capacity(coords.len() * 4);
    let mut taps = Vec::with_capacity(16);
    offsets.push(0u32);
    for c in coords {
        frame.taps(kind, c.lat(), c.lon(), &mut taps);
        for t in &taps {
            taps_out.push(((t.row * frame.width() + t.col) as u32, t.weight));
        }
        offsets.push(taps_out.len() as u32);
    }
    CompiledTaps {
        n_sources: frame.height() * frame.width(),
        offsets,
        taps: taps_out,
    }
}
