//! Synthetic ground truth: core-plus-halo phase-space beams, parametric noise
//! models, and moment-matched noise-distribution fits.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{
    Continuous, ContinuousCDF, Discrete, DiscreteCDF, Exp, Gamma, Normal, Poisson as PoissonDist, Uniform,
};

use crate::emittance::{compute_stats, PhaseSpaceStats, TwissTriple};
use crate::error::{Error, Result};
use crate::image_io::{GridAxes, ScanImage};
use crate::rng::{stream, Domain};

/// A bi-Gaussian core with an optional wider bi-Gaussian halo sharing its
/// Twiss orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    /// RMS emittance of the core (mm·mrad).
    pub emittance: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Always `(1 + α²)/β`; kept in sync by the constructors.
    pub gamma: f64,
    pub peak_intensity: f64,
    pub halo_amplitude_ratio: f64,
    pub halo_sigma_scale: f64,
    pub rows: usize,
    pub cols: usize,
    pub axes: GridAxes,
    pub center: (f64, f64),
}

impl BeamSpec {
    /// Core-only beam on a 128×128 grid spanning ±6σ around the origin.
    pub fn new(emittance: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(emittance > 0.0) || !emittance.is_finite() {
            return Err(Error::BadParams(format!("emittance must be positive, got {emittance}")));
        }
        let t = TwissTriple::from_alpha_beta(alpha, beta)?;
        let spec = BeamSpec {
            emittance,
            alpha,
            beta,
            gamma: t.gamma,
            peak_intensity: 1.0,
            halo_amplitude_ratio: 0.0,
            halo_sigma_scale: 2.5,
            rows: 128,
            cols: 128,
            axes: GridAxes::pixels(),
            center: (0.0, 0.0),
        };
        Ok(spec.with_grid(128, 128, 6.0))
    }

    /// Resizes the grid so it spans ±`n_sigma` RMS sizes around the center.
    pub fn with_grid(mut self, rows: usize, cols: usize, n_sigma: f64) -> Self {
        self.rows = rows;
        self.cols = cols;
        self.axes = GridAxes::centered(
            rows,
            cols,
            self.center.0,
            n_sigma * self.sigma_x(),
            self.center.1,
            n_sigma * self.sigma_xp(),
        );
        self
    }

    pub fn with_peak(mut self, peak: f64) -> Self {
        self.peak_intensity = peak;
        self
    }

    pub fn with_halo(mut self, amplitude_ratio: f64, sigma_scale: f64) -> Self {
        self.halo_amplitude_ratio = amplitude_ratio;
        self.halo_sigma_scale = sigma_scale;
        self
    }

    pub fn twiss(&self) -> TwissTriple {
        TwissTriple {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn sigma_x(&self) -> f64 {
        (self.beta * self.emittance).sqrt()
    }

    pub fn sigma_xp(&self) -> f64 {
        (self.gamma * self.emittance).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadParams(m));
        if !(self.emittance > 0.0) {
            return bad(format!("emittance must be positive, got {}", self.emittance));
        }
        if !(self.beta > 0.0) || !(self.gamma > 0.0) {
            return bad("beta and gamma must be positive".into());
        }
        if (self.beta * self.gamma - self.alpha * self.alpha - 1.0).abs() > 1e-9 {
            return bad("Twiss parameters violate beta*gamma - alpha^2 = 1".into());
        }
        if !(self.peak_intensity >= 0.0) {
            return bad(format!("peak intensity must be nonnegative, got {}", self.peak_intensity));
        }
        if !(0.0..=1.0).contains(&self.halo_amplitude_ratio) {
            return bad(format!("halo amplitude ratio {} outside [0, 1]", self.halo_amplitude_ratio));
        }
        if !(self.halo_sigma_scale >= 1.0) {
            return bad(format!("halo sigma scale {} below 1", self.halo_sigma_scale));
        }
        Ok(())
    }

    /// Closed-form intensity at normalized amplitude `r` (in sigma units).
    pub fn density_at_radius(&self, r: f64) -> f64 {
        let s2 = self.halo_sigma_scale * self.halo_sigma_scale;
        self.peak_intensity * ((-0.5 * r * r).exp() + self.halo_amplitude_ratio * (-0.5 * r * r / s2).exp())
    }

    /// Normalized amplitude of a phase-space point relative to the beam center.
    pub fn radius(&self, x: f64, xp: f64) -> f64 {
        let q = self.twiss().form(x - self.center.0, xp - self.center.1);
        (q / self.emittance).max(0.0).sqrt()
    }
}

/// The noiseless beam together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub clean: ScanImage,
    pub spec: BeamSpec,
    /// Moments of the clean grid.
    pub stats: PhaseSpaceStats,
}

impl GroundTruth {
    /// Analytic radial intensity profile of the generating density.
    pub fn analytic_profile(&self, r: f64) -> f64 {
        self.spec.density_at_radius(r)
    }
}

pub fn generate_beam(spec: &BeamSpec) -> Result<(ScanImage, GroundTruth)> {
    if spec.rows < 16 || spec.cols < 16 {
        return Err(Error::TooSmall {
            rows: spec.rows,
            cols: spec.cols,
        });
    }
    spec.validate()?;
    let grid = Array2::from_shape_fn((spec.rows, spec.cols), |(r, c)| {
        spec.density_at_radius(spec.radius(spec.axes.x(c), spec.axes.xp(r)))
    });
    let clean = ScanImage::new(spec.axes, grid, "synthetic")?;
    let stats = compute_stats(&clean, None)?;
    let truth = GroundTruth {
        clean: clean.clone(),
        spec: *spec,
        stats,
    };
    Ok((clean, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum NoiseModel {
    GaussianAdditive { mean: f64, std: f64 },
    /// Additive U(−half_width, half_width).
    UniformAdditive { half_width: f64 },
    /// Each pixel with probability `fraction` becomes the image min or max.
    SaltPepper { fraction: f64 },
    /// Multiplicative `1 + N(0, std)`.
    Speckle { std: f64 },
    /// `Poisson(v / scale) · scale`, with negative values treated as 0.
    Poisson { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(std: f64, seed: u64) -> Self {
        NoiseSpec {
            model: NoiseModel::GaussianAdditive { mean: 0.0, std },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.model {
            NoiseModel::GaussianAdditive { mean, std } => mean.is_finite() && std >= 0.0,
            NoiseModel::UniformAdditive { half_width } => half_width >= 0.0,
            NoiseModel::SaltPepper { fraction } => (0.0..=1.0).contains(&fraction),
            NoiseModel::Speckle { std } => std >= 0.0,
            NoiseModel::Poisson { scale } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::BadParams(format!("invalid noise parameters {:?}", self.model)))
        }
    }
}

/// Corrupts `img`; the draw sequence is fixed by `noise.seed`.
pub fn add_noise(img: &ScanImage, noise: &NoiseSpec) -> Result<ScanImage> {
    noise.validate()?;
    let mut rng = stream(noise.seed, Domain::Noise, 0);
    let src = &img.intensities;
    let out = match noise.model {
        NoiseModel::GaussianAdditive { mean, std } => src.mapv(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + mean + std * n
        }),
        NoiseModel::UniformAdditive { half_width } => src.mapv(|v| {
            if half_width > 0.0 {
                v + rng.random_range(-half_width..half_width)
            } else {
                v
            }
        }),
        NoiseModel::SaltPepper { fraction } => {
            let (lo, hi) = (img.min(), img.max());
            src.mapv(|v| {
                if rng.random_bool(fraction) {
                    if rng.random_bool(0.5) {
                        hi
                    } else {
                        lo
                    }
                } else {
                    v
                }
            })
        }
        NoiseModel::Speckle { std } => src.mapv(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v * (1.0 + std * n)
        }),
        NoiseModel::Poisson { scale } => src.mapv(|v| {
            let lambda = v.max(0.0) / scale;
            if lambda > 0.0 {
                let k: f64 = Poisson::new(lambda)
                    .expect("positive finite rate")
                    .sample(&mut rng);
                k * scale
            } else {
                0.0
            }
        }),
    };
    Ok(img.with_intensities(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Exponential,
    Gamma,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FittedDistribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Poisson { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub distribution: FittedDistribution,
    /// Pearson chi-square over equal-probability bins of the fitted law.
    pub chi_square: f64,
    pub bins: usize,
}

const GOF_BINS: usize = 32;

/// Moment-matched fit of `family` plus a chi-square goodness-of-fit.
pub fn fit_noise_distribution(samples: &[f64], family: NoiseFamily) -> Result<NoiseFit> {
    let n = samples.len();
    if n < 30 {
        return Err(Error::BadParams(format!("need at least 30 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadParams("samples must be finite".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateSamples);
    }
    let positive_support = matches!(family, NoiseFamily::Exponential | NoiseFamily::Gamma | NoiseFamily::Poisson);
    if positive_support && samples.iter().any(|&v| v < 0.0) {
        return Err(Error::NeedsShift);
    }
    let sd = var.sqrt();
    fn bad<E: std::fmt::Display>(e: E) -> Error {
        Error::BadParams(e.to_string())
    }

    let (distribution, chi_square, bins) = match family {
        NoiseFamily::Gaussian => {
            let d = Normal::new(mean, sd).map_err(bad)?;
            (FittedDistribution::Gaussian { mean, std: sd }, chi_square_continuous(samples, &d), GOF_BINS)
        }
        NoiseFamily::Uniform => {
            let half = 3f64.sqrt() * sd;
            let d = Uniform::new(mean - half, mean + half).map_err(bad)?;
            (
                FittedDistribution::Uniform {
                    low: mean - half,
                    high: mean + half,
                },
                chi_square_continuous(samples, &d),
                GOF_BINS,
            )
        }
        NoiseFamily::Exponential => {
            if !(mean > 0.0) {
                return Err(Error::DegenerateSamples);
            }
            let d = Exp::new(1.0 / mean).map_err(bad)?;
            (
                FittedDistribution::Exponential { rate: 1.0 / mean },
                chi_square_continuous(samples, &d),
                GOF_BINS,
            )
        }
        NoiseFamily::Gamma => {
            if !(mean > 0.0) {
                return Err(Error::DegenerateSamples);
            }
            let (shape, rate) = (mean * mean / var, mean / var);
            let d = Gamma::new(shape, rate).map_err(bad)?;
            (FittedDistribution::Gamma { shape, rate }, chi_square_continuous(samples, &d), GOF_BINS)
        }
        NoiseFamily::Poisson => {
            if !(mean > 0.0) {
                return Err(Error::DegenerateSamples);
            }
            let d = PoissonDist::new(mean).map_err(bad)?;
            let (chi, bins) = chi_square_poisson(samples, &d);
            (FittedDistribution::Poisson { lambda: mean }, chi, bins)
        }
    };
    Ok(NoiseFit {
        distribution,
        chi_square,
        bins,
    })
}

/// Samples are binned by their CDF value, which makes every bin carry
/// probability 1/32 under the fitted law.
fn chi_square_continuous<D: ContinuousCDF<f64, f64> + Continuous<f64, f64>>(samples: &[f64], d: &D) -> f64 {
    let mut counts = [0usize; GOF_BINS];
    for &s in samples {
        let u = d.cdf(s);
        let b = ((u * GOF_BINS as f64) as usize).min(GOF_BINS - 1);
        counts[b] += 1;
    }
    let expected = samples.len() as f64 / GOF_BINS as f64;
    counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
}

/// Integer support is grouped into consecutive runs holding at least 1/32 of
/// the probability each; the final group absorbs the upper tail.
fn chi_square_poisson(samples: &[f64], d: &PoissonDist) -> (f64, usize) {
    let target = 1.0 / GOF_BINS as f64;
    let mut uppers = Vec::new();
    let mut probs = Vec::new();
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        acc += d.pmf(k);
        if acc >= target {
            uppers.push(k);
            probs.push(acc);
            acc = 0.0;
        }
        if d.sf(k) < target {
            break;
        }
        k += 1;
    }
    let tail = d.sf(k) + acc;
    match probs.last_mut() {
        Some(last) => {
            *last += tail;
            *uppers.last_mut().unwrap() = u64::MAX;
        }
        None => {
            uppers.push(u64::MAX);
            probs.push(1.0);
        }
    }
    let mut counts = vec![0usize; probs.len()];
    for &s in samples {
        let k = s.round().max(0.0) as u64;
        let b = uppers.partition_point(|&u| u < k);
        counts[b.min(probs.len() - 1)] += 1;
    }
    let n = samples.len() as f64;
    let chi = counts
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
        .sum();
    (chi, probs.len())
}
