//! Scan images: the calibrated (position × angle) intensity grids everything
//! else operates on, plus their on-disk grid formats, shifting, normalization
//! and 8-bit export.
//!
//! Both grid formats share one layout. The first line carries
//! `rows, cols, x_origin, x_step, xp_origin, xp_step, shift_applied, source_id`
//! and each following line holds one row of intensities. CSV separates fields
//! with commas, `.dat` with whitespace. Values are written with the shortest
//! representation that parses back to the same `f64`, so save → load → save is
//! byte-stable.

mod filters;
mod triage;

pub use filters::{gaussian_filter, median_filter, threshold_denoise};
pub use triage::{triage, RejectReason, TriageDecision, TriagePolicy};

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical calibration of the grid. Column `c` sits at position
/// `x_origin + c * x_step` (mm) and row `r` at angle `xp_origin + r * xp_step`
/// (mrad); coordinates refer to cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub x_origin: f64,
    pub x_step: f64,
    pub xp_origin: f64,
    pub xp_step: f64,
}

impl GridAxes {
    /// Unit pixel pitch with the origin at pixel (0, 0).
    pub fn pixels() -> Self {
        GridAxes {
            x_origin: 0.0,
            x_step: 1.0,
            xp_origin: 0.0,
            xp_step: 1.0,
        }
    }

    /// Axes whose cell centers are symmetric around `(x_center, xp_center)`.
    pub fn centered(
        rows: usize,
        cols: usize,
        x_center: f64,
        x_half_width: f64,
        xp_center: f64,
        xp_half_width: f64,
    ) -> Self {
        let x_step = 2.0 * x_half_width / cols as f64;
        let xp_step = 2.0 * xp_half_width / rows as f64;
        GridAxes {
            x_origin: x_center - x_half_width + 0.5 * x_step,
            x_step,
            xp_origin: xp_center - xp_half_width + 0.5 * xp_step,
            xp_step,
        }
    }

    #[inline]
    pub fn x(&self, col: usize) -> f64 {
        self.x_origin + col as f64 * self.x_step
    }

    #[inline]
    pub fn xp(&self, row: usize) -> f64 {
        self.xp_origin + row as f64 * self.xp_step
    }
}

/// A calibrated 2D intensity grid in mV; rows index angle, columns position.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanImage {
    pub axes: GridAxes,
    pub intensities: Array2<f64>,
    /// Offset already added to every intensity (0 when unshifted).
    pub shift_applied: f64,
    pub source_id: String,
}

impl ScanImage {
    pub fn new(axes: GridAxes, intensities: Array2<f64>, source_id: impl Into<String>) -> Result<Self> {
        let (rows, cols) = intensities.dim();
        if rows < 2 || cols < 2 {
            return Err(Error::TooSmall { rows, cols });
        }
        if !(axes.x_step > 0.0) || !(axes.xp_step > 0.0) {
            return Err(Error::BadParams(format!(
                "axis steps must be positive (x_step={}, xp_step={})",
                axes.x_step, axes.xp_step
            )));
        }
        Ok(ScanImage {
            axes,
            intensities: intensities.as_standard_layout().into_owned(),
            shift_applied: 0.0,
            source_id: source_id.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.intensities.nrows()
    }

    pub fn cols(&self) -> usize {
        self.intensities.ncols()
    }

    pub fn pixel_count(&self) -> usize {
        self.intensities.len()
    }

    pub fn min(&self) -> f64 {
        self.intensities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.intensities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensities.sum()
    }

    /// Same calibration and metadata, different intensities.
    pub fn with_intensities(&self, intensities: Array2<f64>) -> ScanImage {
        assert_eq!(intensities.dim(), self.intensities.dim(), "grid shape changed");
        ScanImage {
            axes: self.axes,
            intensities,
            shift_applied: self.shift_applied,
            source_id: self.source_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridFormat {
    /// Comma-separated grid.
    Csv,
    /// Whitespace-separated grid.
    Dat,
}

impl GridFormat {
    pub fn from_path(path: &Path) -> Option<GridFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(GridFormat::Csv),
            "dat" => Some(GridFormat::Dat),
            _ => None,
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            GridFormat::Csv => line.split(',').map(str::trim).collect(),
            GridFormat::Dat => line.split_whitespace().collect(),
        }
    }

    fn separator(&self) -> char {
        match self {
            GridFormat::Csv => ',',
            GridFormat::Dat => ' ',
        }
    }
}

pub fn load_scan(path: impl AsRef<Path>, format: GridFormat) -> Result<ScanImage> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scan(&text, format)
}

pub fn save_scan(img: &ScanImage, path: impl AsRef<Path>, format: GridFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scan(img, format)).map_err(|e| Error::io(path, e))
}

fn parse_number(field: &str, line: usize, column: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        column,
        text: field.to_string(),
    })
}

fn parse_count(field: &str, line: usize, column: usize) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        line,
        column,
        text: field.to_string(),
    })
}

pub fn parse_scan(text: &str, format: GridFormat) -> Result<ScanImage> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedFile {
        line: 1,
        reason: "missing header".into(),
    })?;

    // The source id may itself contain separators; it is everything after the
    // seventh field.
    let (fields, source_id) = split_header(header, format);
    if fields.len() < 7 {
        return Err(Error::MalformedFile {
            line: 1,
            reason: format!("header has {} numeric fields, expected 7", fields.len()),
        });
    }
    let rows = parse_count(fields[0], 1, 1)?;
    let cols = parse_count(fields[1], 1, 2)?;
    if rows < 2 || cols < 2 {
        return Err(Error::TooSmall { rows, cols });
    }
    let mut nums = [0.0; 5];
    for (i, n) in nums.iter_mut().enumerate() {
        *n = parse_number(fields[2 + i], 1, 3 + i)?;
    }
    let axes = GridAxes {
        x_origin: nums[0],
        x_step: nums[1],
        xp_origin: nums[2],
        xp_step: nums[3],
    };

    let mut data = Vec::with_capacity(rows * cols);
    let mut last_line = 1;
    for r in 0..rows {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::MalformedFile {
                line: last_line + 1,
                reason: format!("expected {rows} data rows, found {r}"),
            });
        };
        last_line = idx + 1;
        let cells = format.split(line);
        if cells.len() != cols {
            return Err(Error::MalformedFile {
                line: idx + 1,
                reason: format!("row has {} cells, expected {cols}", cells.len()),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            data.push(parse_number(cell, idx + 1, c + 1)?);
        }
    }
    if let Some((idx, _)) = lines.next() {
        return Err(Error::MalformedFile {
            line: idx + 1,
            reason: format!("extra data beyond {rows} rows"),
        });
    }

    let grid = Array2::from_shape_vec((rows, cols), data).expect("row-major data sized rows*cols");
    let mut img = ScanImage::new(axes, grid, source_id)?;
    img.shift_applied = nums[4];
    Ok(img)
}

fn split_header(header: &str, format: GridFormat) -> (Vec<&str>, String) {
    match format {
        GridFormat::Csv => {
            let parts: Vec<&str> = header.splitn(8, ',').collect();
            let id = parts.get(7).map(|s| s.to_string()).unwrap_or_default();
            (parts.into_iter().take(7).map(str::trim).collect(), id)
        }
        GridFormat::Dat => {
            let mut fields = Vec::with_capacity(7);
            let mut rest = header.trim_start();
            while fields.len() < 7 && !rest.is_empty() {
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                fields.push(&rest[..end]);
                rest = rest[end..].trim_start();
            }
            (fields, rest.trim_end().to_string())
        }
    }
}

pub fn format_scan(img: &ScanImage, format: GridFormat) -> String {
    let sep = format.separator();
    let a = &img.axes;
    let mut out = String::with_capacity(img.pixel_count() * 12);
    let _ = writeln!(
        out,
        "{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}",
        img.rows(),
        img.cols(),
        a.x_origin,
        a.x_step,
        a.xp_origin,
        a.xp_step,
        img.shift_applied,
        img.source_id
    );
    for row in img.intensities.rows() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(sep);
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Translate intensities so the minimum is zero. Already-nonnegative images are
/// returned unchanged; the offset accumulates in `shift_applied`.
pub fn shift_nonnegative(img: &ScanImage) -> ScanImage {
    let min = img.min();
    if min >= 0.0 {
        return img.clone();
    }
    let offset = -min;
    let mut out = img.with_intensities(img.intensities.mapv(|v| v + offset));
    // v + (-min) is exact for v == min, so the new minimum is exactly 0.
    out.shift_applied = img.shift_applied + offset;
    out
}

/// Undo every recorded shift.
pub fn unshift(img: &ScanImage) -> ScanImage {
    if img.shift_applied == 0.0 {
        return img.clone();
    }
    let s = img.shift_applied;
    let mut out = img.with_intensities(img.intensities.mapv(|v| v - s));
    out.shift_applied = 0.0;
    out
}

/// Min-max normalized copy of a scan; keeps what is needed to map back to mV.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub values: Array2<f64>,
    pub orig_min: f64,
    pub orig_max: f64,
    /// Set when the source was constant; `values` is then all zero.
    pub degenerate: bool,
    pub axes: GridAxes,
    pub shift_applied: f64,
    pub source_id: String,
}

impl NormalizedImage {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Same frame, new values (e.g. a network output).
    pub fn with_values(&self, values: Array2<f64>) -> NormalizedImage {
        assert_eq!(values.dim(), self.values.dim(), "grid shape changed");
        NormalizedImage {
            values,
            ..self.clone_frame()
        }
    }

    fn clone_frame(&self) -> NormalizedImage {
        NormalizedImage {
            values: Array2::zeros((0, 0)),
            orig_min: self.orig_min,
            orig_max: self.orig_max,
            degenerate: self.degenerate,
            axes: self.axes,
            shift_applied: self.shift_applied,
            source_id: self.source_id.clone(),
        }
    }

    /// Express another scan of the same grid on this image's normalized scale
    /// (no clamping), accounting for both images' shifts.
    pub fn normalize_like(&self, img: &ScanImage) -> Array2<f64> {
        let range = self.orig_max - self.orig_min;
        let offset = self.shift_applied - img.shift_applied - self.orig_min;
        img.intensities.mapv(|v| {
            if range > 0.0 {
                (v + offset) / range
            } else {
                0.0
            }
        })
    }

    /// Map another normalized-scale grid (same frame) back to mV with the
    /// recorded shift removed.
    pub fn to_physical(&self, values: ArrayView2<f64>) -> ScanImage {
        let range = self.orig_max - self.orig_min;
        let (min, shift) = (self.orig_min, self.shift_applied);
        ScanImage {
            axes: self.axes,
            intensities: values.mapv(|v| v * range + min - shift),
            shift_applied: 0.0,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn normalize(img: &ScanImage) -> NormalizedImage {
    let (min, max) = (img.min(), img.max());
    let degenerate = !(max > min);
    let values = if degenerate {
        Array2::zeros(img.intensities.dim())
    } else {
        let range = max - min;
        img.intensities.mapv(|v| ((v - min) / range).clamp(0.0, 1.0))
    };
    NormalizedImage {
        values,
        orig_min: min,
        orig_max: max,
        degenerate,
        axes: img.axes,
        shift_applied: img.shift_applied,
        source_id: img.source_id.clone(),
    }
}

pub fn denormalize(img: &NormalizedImage) -> ScanImage {
    let range = img.orig_max - img.orig_min;
    let min = img.orig_min;
    ScanImage {
        axes: img.axes,
        intensities: img.values.mapv(|v| v * range + min),
        shift_applied: img.shift_applied,
        source_id: img.source_id.clone(),
    }
}

/// `round(v * 255)` with halves rounded away from zero, clamped to `0..=255`.
pub fn to_uint8(values: ArrayView2<f64>) -> Array2<u8> {
    values.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Binary portable graymap (P5).
pub fn encode_pgm(bytes: ArrayView2<u8>) -> Vec<u8> {
    let (rows, cols) = bytes.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(bytes.iter().copied());
    out
}

pub fn write_pgm(values: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(to_uint8(values).view())).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileAxis {
    /// Marginal over angle: one value per column (x).
    Position,
    /// Marginal over position: one value per row (x').
    Angle,
}

pub fn extract_profile(img: &ScanImage, axis: ProfileAxis, normalize: bool) -> Result<Vec<f64>> {
    let sum_axis = match axis {
        ProfileAxis::Position => Axis(0),
        ProfileAxis::Angle => Axis(1),
    };
    let mut profile = img.intensities.sum_axis(sum_axis).to_vec();
    if normalize {
        let peak = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak == 0.0 || !peak.is_finite() {
            return Err(Error::ZeroProfile);
        }
        profile.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(profile)
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (…, 2, 1, 0, 1, 2, …), the same rule as reflection padding.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}
