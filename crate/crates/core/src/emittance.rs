//! Phase-space statistics of a scan: intensity-weighted moments, RMS
//! emittance, Twiss parameters, N-sigma ellipses and radial profiles.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::ScanImage;

/// Intensity-weighted first and second moments over the (x, x') plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceStats {
    pub mean_x: f64,
    pub mean_xp: f64,
    pub var_x: f64,
    pub var_xp: f64,
    /// Plain covariance ⟨xx'⟩ − ⟨x⟩⟨x'⟩ (signed, no square root).
    pub cov_xxp: f64,
    pub sigma_x: f64,
    pub sigma_xp: f64,
    pub emittance_rms: f64,
    pub total_intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwissTriple {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TwissTriple {
    /// Builds the triple from (α, β) with γ = (1 + α²)/β.
    pub fn from_alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !alpha.is_finite() {
            return Err(Error::BadParams(format!("invalid Twiss alpha={alpha}, beta={beta}")));
        }
        Ok(TwissTriple {
            alpha,
            beta,
            gamma: (1.0 + alpha * alpha) / beta,
        })
    }

    /// βγ − α², which is 1 for a consistent triple.
    pub fn determinant(&self) -> f64 {
        self.beta * self.gamma - self.alpha * self.alpha
    }

    /// The Courant–Snyder quadratic form γx² + 2αxx' + βx'².
    #[inline]
    pub fn form(&self, x: f64, xp: f64) -> f64 {
        self.gamma * x * x + 2.0 * self.alpha * x * xp + self.beta * xp * xp
    }
}

/// Weighted moments over the pixels selected by `mask` (all when `None`).
pub fn compute_stats(img: &ScanImage, mask: Option<&Array2<bool>>) -> Result<PhaseSpaceStats> {
    if let Some(m) = mask {
        if m.dim() != img.intensities.dim() {
            return Err(Error::shape("mask shape differs from image"));
        }
    }
    let axes = img.axes;
    let included = |r: usize, c: usize| mask.is_none_or(|m| m[[r, c]]);

    let (mut total, mut sx, mut sxp) = (0.0, 0.0, 0.0);
    for ((r, c), &w) in img.intensities.indexed_iter() {
        if included(r, c) {
            total += w;
            sx += w * axes.x(c);
            sxp += w * axes.xp(r);
        }
    }
    if !(total > 0.0) {
        return Err(Error::EmptyBeam);
    }
    let mean_x = sx / total;
    let mean_xp = sxp / total;

    // Central second moments, accumulated around the means.
    let (mut sxx, mut spp, mut sxp2) = (0.0, 0.0, 0.0);
    for ((r, c), &w) in img.intensities.indexed_iter() {
        if included(r, c) {
            let dx = axes.x(c) - mean_x;
            let dp = axes.xp(r) - mean_xp;
            sxx += w * dx * dx;
            spp += w * dp * dp;
            sxp2 += w * dx * dp;
        }
    }
    let var_x = (sxx / total).max(0.0);
    let var_xp = (spp / total).max(0.0);
    let cov_xxp = sxp2 / total;
    let det = var_x * var_xp - cov_xxp * cov_xxp;
    Ok(PhaseSpaceStats {
        mean_x,
        mean_xp,
        var_x,
        var_xp,
        cov_xxp,
        sigma_x: var_x.sqrt(),
        sigma_xp: var_xp.sqrt(),
        emittance_rms: det.max(0.0).sqrt(),
        total_intensity: total,
    })
}

pub fn twiss(stats: &PhaseSpaceStats) -> Result<TwissTriple> {
    let eps = stats.emittance_rms;
    if !(eps > 0.0) {
        return Err(Error::DegenerateEmittance);
    }
    Ok(TwissTriple {
        alpha: -stats.cov_xxp / eps,
        beta: stats.var_x / eps,
        gamma: stats.var_xp / eps,
    })
}

/// Area π·N²·ε of the N-sigma ellipse.
pub fn ellipse_area(emittance: f64, n_sigma: f64) -> f64 {
    PI * n_sigma * n_sigma * emittance
}

/// Vertices of the ellipse γx² + 2αxx' + βx'² = N²ε around `center`.
pub fn nsigma_contour(
    twiss: &TwissTriple,
    emittance: f64,
    n_sigma: f64,
    points: usize,
    center: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    if points < 8 {
        return Err(Error::BadParams(format!("contour needs at least 8 points, got {points}")));
    }
    if !(emittance > 0.0) || !(twiss.beta > 0.0) || !(twiss.gamma > 0.0) {
        return Err(Error::DegenerateEmittance);
    }
    let level = n_sigma * n_sigma * emittance;
    let a = (twiss.beta * level).sqrt();
    let b = (level / twiss.beta).sqrt();
    Ok((0..points)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / points as f64;
            let (s, c) = t.sin_cos();
            (center.0 + a * c, center.1 - b * (twiss.alpha * c + s))
        })
        .collect())
}

/// Normalized-amplitude frame: r² = form(x − x₀, x' − x₀')/ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialFrame {
    pub center_x: f64,
    pub center_xp: f64,
    pub twiss: TwissTriple,
    pub emittance: f64,
}

impl RadialFrame {
    pub fn from_stats(stats: &PhaseSpaceStats) -> Result<Self> {
        Ok(RadialFrame {
            center_x: stats.mean_x,
            center_xp: stats.mean_xp,
            twiss: twiss(stats)?,
            emittance: stats.emittance_rms,
        })
    }

    /// Amplitude of a point in units of the RMS sigma.
    #[inline]
    pub fn radius(&self, x: f64, xp: f64) -> f64 {
        (self.twiss.form(x - self.center_x, xp - self.center_xp) / self.emittance)
            .max(0.0)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub bin_width: f64,
    /// Mean intensity per bin; `None` when no pixel falls in the bin.
    pub mean: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl RadialProfile {
    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }
}

/// Mean intensity in `bins` equal amplitude shells covering `[0, r_max)`.
pub fn radial_profile(img: &ScanImage, frame: &RadialFrame, bins: usize, r_max: f64) -> Result<RadialProfile> {
    if bins < 4 {
        return Err(Error::BadParams(format!("radial profile needs at least 4 bins, got {bins}")));
    }
    if !(frame.emittance > 0.0) {
        return Err(Error::DegenerateEmittance);
    }
    let width = r_max / bins as f64;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for ((r, c), &v) in img.intensities.indexed_iter() {
        let rad = frame.radius(img.axes.x(c), img.axes.xp(r));
        let bin = (rad / width) as usize;
        if rad < r_max && bin < bins {
            sums[bin] += v;
            counts[bin] += 1;
        }
    }
    let mean = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok(RadialProfile {
        bin_width: width,
        mean,
        counts,
    })
}

/// π·ε over the pixels at or above `fraction · max`; 0 when nothing qualifies.
pub fn beam_area_metric(img: &ScanImage, area_threshold_fraction: f64) -> f64 {
    let max = img.max();
    if !(max > 0.0) {
        return 0.0;
    }
    let t = area_threshold_fraction * max;
    let mask = img.intensities.mapv(|v| v >= t);
    match compute_stats(img, Some(&mask)) {
        Ok(stats) => ellipse_area(stats.emittance_rms, 1.0),
        Err(_) => 0.0,
    }
}

/// Pixels at or above `fraction · max` that are 4-connected to the brightest
/// pixel.
pub fn core_mask(img: &ScanImage, fraction: f64) -> Array2<bool> {
    let (rows, cols) = img.intensities.dim();
    let mut mask = Array2::from_elem((rows, cols), false);
    let Some(((r0, c0), &peak)) = img
        .intensities
        .indexed_iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return mask;
    };
    if !(peak > 0.0) {
        return mask;
    }
    let t = fraction * peak;
    let mut stack = vec![(r0, c0)];
    mask[[r0, c0]] = true;
    while let Some((r, c)) = stack.pop() {
        let neighbors = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        for (nr, nc) in neighbors {
            if nr < rows && nc < cols && !mask[[nr, nc]] && img.intensities[[nr, nc]] >= t {
                mask[[nr, nc]] = true;
                stack.push((nr, nc));
            }
        }
    }
    mask
}

/// Moments of the connected beam core (see [`core_mask`]).
pub fn core_stats(img: &ScanImage, fraction: f64) -> Result<PhaseSpaceStats> {
    compute_stats(img, Some(&core_mask(img, fraction)))
}
