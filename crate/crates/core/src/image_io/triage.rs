//! Automatic sorting of scans into usable and unusable.
//!
//! The background level and noise scale are estimated robustly (median and
//! MAD) so the rules work on raw scans with negative baseline noise.

use serde::{Deserialize, Serialize};

use super::ScanImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriagePolicy {
    /// Minimum `(peak - median) / noise_sigma`, with `noise_sigma` the MAD
    /// scale estimate of the whole image.
    pub min_peak_to_median: f64,
    /// Largest tolerated centroid offset from the grid center, as a fraction
    /// of the half-extent along either axis.
    pub max_centroid_offset: f64,
    /// Minimum number of occupied pixels.
    pub min_occupied: usize,
    /// A pixel is occupied when it rises above the median by this fraction of
    /// `peak - median` (and by at least three noise sigmas).
    pub occupied_fraction: f64,
}

impl Default for TriagePolicy {
    fn default() -> Self {
        TriagePolicy {
            min_peak_to_median: 5.0,
            max_centroid_offset: 0.25,
            min_occupied: 50,
            occupied_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoBeam,
    OffCenter,
    TooSmall,
    Unreadable,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NoBeam => "no-beam",
            RejectReason::OffCenter => "off-center",
            RejectReason::TooSmall => "too-small",
            RejectReason::Unreadable => "unreadable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriageDecision {
    Accept,
    Reject(RejectReason),
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let upper = *values.select_nth_unstable_by(mid, f64::total_cmp).1;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

pub fn triage(img: &ScanImage, policy: &TriagePolicy) -> TriageDecision {
    let mut values: Vec<f64> = img.intensities.iter().copied().collect();
    let med = median(&mut values);
    let mut deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let sigma = 1.4826 * median(&mut deviations);
    let peak = img.max();
    let height = peak - med;

    let ratio = if height <= 0.0 {
        0.0
    } else if sigma > 0.0 {
        height / sigma
    } else {
        f64::INFINITY
    };
    if ratio < policy.min_peak_to_median {
        return TriageDecision::Reject(RejectReason::NoBeam);
    }

    let floor = (policy.occupied_fraction * height).max(3.0 * sigma);
    let (rows, cols) = img.intensities.dim();
    let (mut count, mut mass, mut sum_r, mut sum_c) = (0usize, 0.0, 0.0, 0.0);
    for ((r, c), &v) in img.intensities.indexed_iter() {
        let excess = v - med;
        if excess >= floor {
            count += 1;
            mass += excess;
            sum_r += excess * r as f64;
            sum_c += excess * c as f64;
        }
    }
    if count < policy.min_occupied {
        return TriageDecision::Reject(RejectReason::TooSmall);
    }

    let half_r = (rows as f64 - 1.0) / 2.0;
    let half_c = (cols as f64 - 1.0) / 2.0;
    let off_r = (sum_r / mass - half_r).abs() / half_r;
    let off_c = (sum_c / mass - half_c).abs() / half_c;
    if off_r.max(off_c) > policy.max_centroid_offset {
        return TriageDecision::Reject(RejectReason::OffCenter);
    }
    TriageDecision::Accept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::GridAxes;
    use crate::rng::{stream, Domain};
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn beam_at(rows: usize, cols: usize, r0: f64, c0: f64, sigma: f64, noise: f64, seed: u64) -> ScanImage {
        let mut rng = stream(seed, Domain::Sampling, 0);
        let grid = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
            let n: f64 = StandardNormal.sample(&mut rng);
            (-d2 / (2.0 * sigma * sigma)).exp() + noise * n
        });
        ScanImage::new(GridAxes::pixels(), grid, "t").unwrap()
    }

    #[test]
    fn pure_noise_has_no_beam() {
        for seed in 0..5 {
            let mut rng = stream(seed, Domain::Noise, 0);
            let grid = Array2::from_shape_fn((64, 64), |_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                0.05 * n
            });
            let noise = ScanImage::new(GridAxes::pixels(), grid, "n").unwrap();
            assert_eq!(
                triage(&noise, &TriagePolicy::default()),
                TriageDecision::Reject(RejectReason::NoBeam)
            );
        }
        let flat = ScanImage::new(GridAxes::pixels(), Array2::from_elem((8, 8), 1.0), "f").unwrap();
        assert_eq!(
            triage(&flat, &TriagePolicy::default()),
            TriageDecision::Reject(RejectReason::NoBeam)
        );
    }

    #[test]
    fn centered_beam_accepted() {
        let img = beam_at(64, 64, 31.5, 31.5, 5.0, 0.05, 1);
        assert_eq!(triage(&img, &TriagePolicy::default()), TriageDecision::Accept);
        let clean = beam_at(64, 64, 31.5, 31.5, 5.0, 0.0, 1);
        assert_eq!(triage(&clean, &TriagePolicy::default()), TriageDecision::Accept);
    }

    #[test]
    fn off_center_and_too_small() {
        // Centroid at 95% of the column extent is 0.9 half-extents off center.
        let img = beam_at(64, 64, 31.5, 0.95 * 63.0, 4.0, 0.02, 2);
        let policy = TriagePolicy {
            max_centroid_offset: 0.2,
            ..TriagePolicy::default()
        };
        assert_eq!(triage(&img, &policy), TriageDecision::Reject(RejectReason::OffCenter));

        let tiny = beam_at(64, 64, 31.5, 31.5, 0.6, 0.01, 3);
        assert_eq!(
            triage(&tiny, &TriagePolicy::default()),
            TriageDecision::Reject(RejectReason::TooSmall)
        );
    }
}
