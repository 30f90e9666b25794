//! Reflect-padded 2D cross-correlation lowered to matrix products.

use crate::image_io::reflect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 convolution reads the input directly as its patch matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Source index along one axis for each (tap, output) pair.
    fn table(&self, n: usize, n_out: usize) -> Vec<usize> {
        let pad = self.pad() as isize;
        let mut t = Vec::with_capacity(self.k * n_out);
        for tap in 0..self.k as isize {
            for o in 0..n_out as isize {
                t.push(reflect(o * self.stride as isize + tap - pad, n));
            }
        }
        t
    }

    pub fn tables(&self) -> (Vec<usize>, Vec<usize>) {
        (self.table(self.h, self.ho), self.table(self.w, self.wo))
    }
}

/// Builds the `[C·k·k, Ho·Wo]` patch matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom, rows_t: &[usize], cols_t: &[usize], out: &mut [f64]) {
    let (k, hw) = (g.k, g.h * g.w);
    let n_out = g.out_len();
    for c in 0..g.c {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let rsrc = &rows_t[ky * g.ho..(ky + 1) * g.ho];
            for kx in 0..k {
                let csrc = &cols_t[kx * g.wo..(kx + 1) * g.wo];
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * n_out..(row + 1) * n_out];
                for (oy, &sy) in rsrc.iter().enumerate() {
                    let src_row = &plane[sy * g.w..(sy + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (dv, &sx) in d.iter_mut().zip(csrc) {
                        *dv = src_row[sx];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the input gradient.
pub(crate) fn col2im(dcols: &[f64], g: &ConvGeom, rows_t: &[usize], cols_t: &[usize], din: &mut [f64]) {
    let (k, hw) = (g.k, g.h * g.w);
    let n_out = g.out_len();
    for c in 0..g.c {
        let plane = &mut din[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let rsrc = &rows_t[ky * g.ho..(ky + 1) * g.ho];
            for kx in 0..k {
                let csrc = &cols_t[kx * g.wo..(kx + 1) * g.wo];
                let row = (c * k + ky) * k + kx;
                let src = &dcols[row * n_out..(row + 1) * n_out];
                for (oy, &sy) in rsrc.iter().enumerate() {
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst_row = &mut plane[sy * g.w..(sy + 1) * g.w];
                    for (&sv, &sx) in s.iter().zip(csrc) {
                        dst_row[sx] += sv;
                    }
                }
            }
        }
    }
}

/// `C[m×n] = beta·C + A·B` with explicit row/column strides for A and B.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that hold the full m×k, k×n and m×n
    // operands under the given strides; C does not alias A or B.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
