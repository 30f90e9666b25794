//! Signal/background segmentation: threshold partition, DBSCAN, HDBSCAN and
//! Gaussian mixtures on phase-space point clouds.
//!
//! Distances are Euclidean on `(x, x')` in physical units. Intensities never
//! enter the metric; the mixture fit uses them as sample weights.

mod dbscan;
mod gmm;
mod hdbscan;

pub use dbscan::{dbscan, dbscan_core_points};
pub use gmm::{gmm_fit, GmmFit};
pub use hdbscan::hdbscan;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::ScanImage;

/// `mask[i] == (intensity[i] >= t)`.
pub fn threshold_partition(img: &ScanImage, t: f64) -> Array2<bool> {
    img.intensities.mapv(|v| v >= t)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 2]>,
    /// Optional per-point intensity, aligned with `points`.
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::BadParams("point coordinates must be finite".into()));
        }
        Ok(PointCloud {
            points,
            intensity: None,
        })
    }

    pub fn with_intensity(mut self, intensity: Vec<f64>) -> Result<Self> {
        if intensity.len() != self.points.len() {
            return Err(Error::shape(format!(
                "{} intensities for {} points",
                intensity.len(),
                self.points.len()
            )));
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParams("intensities must be finite".into()));
        }
        self.intensity = Some(intensity);
        Ok(self)
    }

    /// One point per pixel at or above `floor`, in physical coordinates, with
    /// its intensity attached. Pixels are visited in row-major order.
    pub fn from_image(img: &ScanImage, floor: f64) -> Self {
        let mut points = Vec::new();
        let mut intensity = Vec::new();
        for ((r, c), &v) in img.intensities.indexed_iter() {
            if v >= floor {
                points.push([img.axes.x(c), img.axes.xp(r)]);
                intensity.push(v);
            }
        }
        PointCloud {
            points,
            intensity: Some(intensity),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// `-1` marks noise; clusters are numbered `0..k`.
    pub labels: Vec<i32>,
    pub k: usize,
}

impl ClusterLabels {
    /// Renumbers raw labels (`-1` for noise) by first appearance.
    pub(crate) fn from_raw(raw: &[i64]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                if l < 0 {
                    -1
                } else {
                    let next = map.len() as i32;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        ClusterLabels { labels, k: map.len() }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    /// Mask of the points carrying `label`, laid back onto the pixels that
    /// [`PointCloud::from_image`] emitted for `img` at `floor`.
    pub fn pixel_mask(&self, img: &ScanImage, floor: f64, label: i32) -> Array2<bool> {
        let mut mask = Array2::from_elem(img.intensities.dim(), false);
        let mut i = 0;
        for ((r, c), &v) in img.intensities.indexed_iter() {
            if v >= floor {
                mask[[r, c]] = self.labels.get(i) == Some(&label);
                i += 1;
            }
        }
        mask
    }
}
