//! Classical baselines: median, Gaussian and hard-threshold denoising.
//! Every spatial filter uses reflected borders.

use ndarray::Array2;

use super::{reflect, ScanImage};
use crate::error::{Error, Result};

/// Exact median over each reflected `k × k` neighborhood.
pub fn median_filter(img: &ScanImage, k: usize) -> Result<ScanImage> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::BadWindow(k));
    }
    let (rows, cols) = img.intensities.dim();
    let half = (k / 2) as isize;
    let src = &img.intensities;
    let mut window = Vec::with_capacity(k * k);
    let mid = k * k / 2;
    let out = Array2::from_shape_fn((rows, cols), |(r, c)| {
        window.clear();
        for dr in -half..=half {
            let rr = reflect(r as isize + dr, rows);
            for dc in -half..=half {
                window.push(src[[rr, reflect(c as isize + dc, cols)]]);
            }
        }
        *window.select_nth_unstable_by(mid, f64::total_cmp).1
    });
    Ok(img.with_intensities(out))
}

/// Separable Gaussian smoothing with a normalized kernel of radius `ceil(3σ)`.
pub fn gaussian_filter(img: &ScanImage, sigma: f64) -> Result<ScanImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (rows, cols) = img.intensities.dim();
    let src = &img.intensities;

    let horiz = Array2::from_shape_fn((rows, cols), |(r, c)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, w)| w * src[[r, reflect(c as isize + i as isize - radius, cols)]])
            .sum::<f64>()
    });
    let out = Array2::from_shape_fn((rows, cols), |(r, c)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, w)| w * horiz[[reflect(r as isize + i as isize - radius, rows), c]])
            .sum::<f64>()
    });
    Ok(img.with_intensities(out))
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Zero every pixel below `t`; pixels at or above `t` pass unchanged.
pub fn threshold_denoise(img: &ScanImage, t: f64) -> ScanImage {
    img.with_intensities(img.intensities.mapv(|v| if v < t { 0.0 } else { v }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::GridAxes;
    use rand::{Rng, SeedableRng};

    fn scan(grid: Array2<f64>) -> ScanImage {
        ScanImage::new(GridAxes::pixels(), grid, "t").unwrap()
    }

    fn random_scan(rows: usize, cols: usize, seed: u64) -> ScanImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        scan(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn median_rejects_even_window() {
        let img = scan(Array2::zeros((4, 4)));
        assert!(matches!(median_filter(&img, 4), Err(Error::BadWindow(4))));
        assert!(matches!(median_filter(&img, 1), Err(Error::BadWindow(1))));
    }

    #[test]
    fn median_constant_and_impulse() {
        let c = scan(Array2::from_elem((5, 6), 3.5));
        assert_eq!(median_filter(&c, 3).unwrap(), c);

        let mut g = Array2::zeros((7, 7));
        g[[3, 3]] = 100.0;
        let out = median_filter(&scan(g), 3).unwrap();
        assert_eq!(out.intensities[[3, 3]], 0.0);
        assert!(out.intensities.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_matches_sorting_oracle() {
        for seed in 0..20 {
            let img = random_scan(16, 16, seed);
            for k in [3usize, 5] {
                let out = median_filter(&img, k).unwrap();
                let h = (k / 2) as isize;
                for r in 0..16 {
                    for c in 0..16 {
                        let mut w = Vec::new();
                        for dr in -h..=h {
                            for dc in -h..=h {
                                let rr = reflect(r as isize + dr, 16);
                                let cc = reflect(c as isize + dc, 16);
                                w.push(img.intensities[[rr, cc]]);
                            }
                        }
                        w.sort_by(f64::total_cmp);
                        assert_eq!(out.intensities[[r, c]], w[w.len() / 2]);
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_constant_impulse_linearity() {
        assert!(matches!(
            gaussian_filter(&scan(Array2::zeros((4, 4))), 0.0),
            Err(Error::BadSigma(_))
        ));

        let c = scan(Array2::from_elem((9, 11), 2.0));
        let out = gaussian_filter(&c, 1.3).unwrap();
        assert!(out.intensities.iter().all(|&v| (v - 2.0).abs() < 1e-12));

        // Impulse far from the borders reproduces the separable sampled kernel.
        let sigma = 1.2;
        let mut g = Array2::zeros((21, 21));
        g[[10, 10]] = 1.0;
        let out = gaussian_filter(&scan(g), sigma).unwrap();
        let radius = (3.0 * sigma).ceil() as i32;
        let norm: f64 = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let expect = (-(dr * dr + dc * dc) as f64 / (2.0 * sigma * sigma)).exp() / (norm * norm);
                let got = out.intensities[[(10 + dr) as usize, (10 + dc) as usize]];
                assert!((got - expect).abs() < 1e-15, "{dr},{dc}: {got} vs {expect}");
            }
        }
        assert!((out.total_intensity() - 1.0).abs() < 1e-9);

        let img = random_scan(12, 10, 3);
        let scaled = img.with_intensities(img.intensities.mapv(|v| 3.0 * v));
        let a = gaussian_filter(&scaled, 0.8).unwrap();
        let b = gaussian_filter(&img, 0.8).unwrap();
        for (x, y) in a.intensities.iter().zip(b.intensities.iter()) {
            assert!((x - 3.0 * y).abs() < 1e-12);
        }
        assert_eq!(a.intensities.dim(), (12, 10));
    }

    #[test]
    fn threshold_extremes() {
        let img = random_scan(6, 6, 9);
        assert_eq!(threshold_denoise(&img, img.min()), img);
        assert!(threshold_denoise(&img, img.max() + 1.0)
            .intensities
            .iter()
            .all(|&v| v == 0.0));
    }
}
