//! No-reference sharpness/information measures and PSNR.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::image_io::{reflect, to_uint8};

/// Shannon entropy (bits) of the 256-bin histogram of the 8-bit quantization.
pub fn shannon_entropy(values: ArrayView2<f64>) -> f64 {
    let bytes = to_uint8(values);
    let mut hist = [0usize; 256];
    for &b in &bytes {
        hist[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

fn correlate3(values: ArrayView2<f64>, k: &[[f64; 3]; 3]) -> Array2<f64> {
    let (rows, cols) = values.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let mut acc = 0.0;
        for (dr, krow) in k.iter().enumerate() {
            let rr = reflect(r as isize + dr as isize - 1, rows);
            for (dc, &kv) in krow.iter().enumerate() {
                if kv != 0.0 {
                    acc += kv * values[[rr, reflect(c as isize + dc as isize - 1, cols)]];
                }
            }
        }
        acc
    })
}

const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Population variance of the 4-neighbor Laplacian response.
pub fn laplacian_variance(values: ArrayView2<f64>) -> f64 {
    let lap = correlate3(values, &LAPLACIAN);
    let n = lap.len() as f64;
    let mean = lap.sum() / n;
    lap.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Sum of squared Sobel gradient magnitudes.
pub fn tenengrad(values: ArrayView2<f64>) -> f64 {
    let gx = correlate3(values, &SOBEL_X);
    let gy = correlate3(values, &SOBEL_Y);
    gx.iter().zip(gy.iter()).map(|(a, b)| a * a + b * b).sum()
}

/// Peak signal-to-noise ratio in dB for unit peak; `+∞` for identical inputs.
pub fn psnr(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("psnr of {:?} and {:?}", a.dim(), b.dim())));
    }
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}
