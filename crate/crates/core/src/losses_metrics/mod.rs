//! Training objective and image-quality readouts.
//!
//! The composite loss combines a weighted MSE, an MAE, total variation of the
//! output and a gradient-difference term. Every component is a mean: MSE and
//! MAE over included pixels, TV and GDL over horizontally or vertically
//! adjacent pixel pairs whose endpoints are both included.

mod metrics;

pub use metrics::{laplacian_variance, psnr, shannon_entropy, tenengrad};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::image_io::NormalizedImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_mae: f64,
    pub w_tv: f64,
    pub w_gd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_mse: 1.0,
            w_mae: 0.1,
            w_tv: 0.05,
            w_gd: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_mse, self.w_mae, self.w_tv, self.w_gd];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::BadParams(format!("loss weights must be nonnegative: {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::BadParams("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub mae: f64,
    pub tv: f64,
    pub gdl: f64,
    pub total: f64,
}

/// `floor + (1 − floor)·v`: bright pixels weigh up to 1, background `floor`.
pub fn weight_map(target: &NormalizedImage, floor: f64) -> Result<Array2<f64>> {
    weight_map_values(target.values.view(), floor)
}

pub fn weight_map_values(values: ArrayView2<f64>, floor: f64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::BadParams(format!("weight floor {floor} outside [0, 1)")));
    }
    Ok(values.mapv(|v| floor + (1.0 - floor) * v))
}

/// Everything about the objective that stays fixed across iterations:
/// target, masked weights, adjacency masks and the difference kernels.
#[derive(Debug, Clone)]
pub struct LossContext {
    rows: usize,
    cols: usize,
    target: Tensor,
    mask: Tensor,
    weighted_mask: Tensor,
    pair_mask: Tensor,
    diff_kernel: Tensor,
    n_pixels: usize,
    n_pairs: usize,
    pub weights: LossWeights,
}

/// Graph handles of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub mse: Var,
    pub mae: Var,
    pub tv: Var,
    pub gdl: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            mse: g.value(self.mse).item(),
            mae: g.value(self.mae).item(),
            tv: g.value(self.tv).item(),
            gdl: g.value(self.gdl).item(),
            total: g.value(self.total).item(),
        }
    }
}

impl LossContext {
    pub fn new(
        target: ArrayView2<f64>,
        pixel_weights: ArrayView2<f64>,
        mask: &Array2<bool>,
        weights: LossWeights,
    ) -> Result<Self> {
        let (rows, cols) = target.dim();
        if pixel_weights.dim() != (rows, cols) || mask.dim() != (rows, cols) {
            return Err(Error::shape("target, weights and mask must share a shape"));
        }
        if rows < 2 || cols < 2 {
            return Err(Error::TooSmall { rows, cols });
        }
        let n_pixels = mask.iter().filter(|&&m| m).count();
        if n_pixels == 0 {
            return Err(Error::EmptyMask);
        }
        let m = |r: usize, c: usize| if mask[[r, c]] { 1.0 } else { 0.0 };

        // Channel 0 pairs (r, c) with (r, c + 1); channel 1 with (r + 1, c).
        let mut pairs = vec![0.0; 2 * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    pairs[r * cols + c] = m(r, c) * m(r, c + 1);
                }
                if r + 1 < rows {
                    pairs[rows * cols + r * cols + c] = m(r, c) * m(r + 1, c);
                }
            }
        }
        let n_pairs = pairs.iter().filter(|&&v| v > 0.0).count();

        let mut k = vec![0.0; 18];
        // Forward differences as 3×3 cross-correlation taps around the center (index 4).
        k[4] = -1.0;
        k[5] = 1.0;
        k[9 + 4] = -1.0;
        k[9 + 7] = 1.0;

        let shape = [1, rows, cols];
        let flat = |a: ArrayView2<f64>| a.iter().copied().collect::<Vec<f64>>();
        let mask_vals: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let weighted: Vec<f64> = pixel_weights.iter().zip(&mask_vals).map(|(w, m)| w * m).collect();
        Ok(LossContext {
            rows,
            cols,
            target: Tensor::new(&shape, flat(target))?,
            mask: Tensor::new(&shape, mask_vals)?,
            weighted_mask: Tensor::new(&shape, weighted)?,
            pair_mask: Tensor::new(&[2, rows, cols], pairs)?,
            diff_kernel: Tensor::new(&[2, 1, 3, 3], k)?,
            n_pixels,
            n_pairs,
            weights,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn included_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn included_pairs(&self) -> usize {
        self.n_pairs
    }

    /// Appends the loss of `out` (shape `[1, rows, cols]`) to the graph.
    pub fn build(&self, g: &mut Graph, out: Var) -> Result<LossTerms> {
        if g.value(out).shape() != [1, self.rows, self.cols] {
            return Err(Error::shape(format!(
                "output shape {:?} does not match target {}x{}",
                g.value(out).shape(),
                self.rows,
                self.cols
            )));
        }
        let target = g.constant(self.target.clone());
        let mask = g.constant(self.mask.clone());
        let wmask = g.constant(self.weighted_mask.clone());
        let pairs = g.constant(self.pair_mask.clone());
        let kernel = g.constant(self.diff_kernel.clone());
        let per_pixel = 1.0 / self.n_pixels as f64;
        let per_pair = if self.n_pairs > 0 { 1.0 / self.n_pairs as f64 } else { 0.0 };

        let d = g.sub(out, target)?;
        let d2 = g.square(d);
        let wd2 = g.mul(d2, wmask)?;
        let s = g.sum(wd2);
        let mse = g.scale(s, per_pixel);

        let ad = g.abs(d);
        let mad = g.mul(ad, mask)?;
        let s = g.sum(mad);
        let mae = g.scale(s, per_pixel);

        let dout = g.conv2d(out, kernel, None, 1)?;
        let a = g.abs(dout);
        let a = g.mul(a, pairs)?;
        let s = g.sum(a);
        let tv = g.scale(s, per_pair);

        // |∇out − ∇target| equals |∇(out − target)| by linearity.
        let dd = g.conv2d(d, kernel, None, 1)?;
        let a = g.abs(dd);
        let a = g.mul(a, pairs)?;
        let s = g.sum(a);
        let gdl = g.scale(s, per_pair);

        let lw = self.weights;
        let t0 = g.scale(mse, lw.w_mse);
        let t1 = g.scale(mae, lw.w_mae);
        let t2 = g.scale(tv, lw.w_tv);
        let t3 = g.scale(gdl, lw.w_gd);
        let total = g.add(t0, t1)?;
        let total = g.add(total, t2)?;
        let total = g.add(total, t3)?;
        Ok(LossTerms {
            mse,
            mae,
            tv,
            gdl,
            total,
        })
    }

    /// Loss of a fixed output image, without gradients.
    pub fn evaluate(&self, out: ArrayView2<f64>) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let o = g.constant(Tensor::new(&[1, self.rows, self.cols], out.iter().copied().collect())?);
        Ok(self.build(&mut g, o)?.breakdown(&g))
    }
}

/// One-shot loss of `out` against `target` over `mask`.
pub fn composite_loss(
    out: ArrayView2<f64>,
    target: ArrayView2<f64>,
    pixel_weights: ArrayView2<f64>,
    mask: &Array2<bool>,
    lw: LossWeights,
) -> Result<LossBreakdown> {
    LossContext::new(target, pixel_weights, mask, lw)?.evaluate(out)
}
