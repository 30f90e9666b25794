//! Reverse-mode differentiation on a per-iteration tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and accumulates
//! gradients into every leaf created with `requires_grad`. Leaf gradients
//! persist across `backward` calls until [`Graph::zero_grad`].

mod adam;
mod conv;
mod gradcheck;

pub use adam::Adam;
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};

use conv::{col2im, gemm, im2col, ConvGeom};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, rows, cols)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!("expected (C, H, W), got {:?}", self.shape))),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        /// Patch matrix kept for the kernel gradient; empty for pointwise convs.
        cols: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Upsample2x {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Abs(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input; its gradient is accumulated by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A fixed input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a tracked node, if any has been computed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Cross-correlation with a `[O, C, k, k]` kernel, reflection padding of
    /// `k / 2` and stride 1 or 2.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let kshape = self.value(kernel).shape().to_vec();
        let [o, kc, kh, kw] = kshape[..] else {
            return Err(Error::shape(format!("kernel must be rank 4, got {kshape:?}")));
        };
        if kc != c {
            return Err(Error::shape(format!("kernel expects {kc} channels, input has {c}")));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(Error::shape(format!(
                    "bias shape {:?} does not match {o} outputs",
                    self.value(b).shape()
                )));
            }
        }
        let pad = kh / 2;
        if h <= pad || w <= pad {
            return Err(Error::shape(format!("{h}x{w} input too small for reflection padding {pad}")));
        }
        let (ho, wo) = match stride {
            1 => (h, w),
            2 if h % 2 == 0 && w % 2 == 0 => (h / 2, w / 2),
            2 => return Err(Error::shape(format!("stride 2 needs even dimensions, got {h}x{w}"))),
            s => return Err(Error::shape(format!("unsupported stride {s}"))),
        };
        let geom = ConvGeom {
            c,
            h,
            w,
            o,
            k: kh,
            stride,
            ho,
            wo,
        };

        let n_out = geom.out_len();
        let mut out = vec![0.0; o * n_out];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(n_out).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let kdata = self.value(kernel).data();
        let plen = geom.patch_len();
        let cols = if geom.is_pointwise() {
            gemm(o, plen, n_out, kdata, (plen as isize, 1), self.value(input).data(), (n_out as isize, 1), beta, &mut out);
            Vec::new()
        } else {
            let (rt, ct) = geom.tables();
            let mut cols = vec![0.0; plen * n_out];
            im2col(self.value(input).data(), &geom, &rt, &ct, &mut cols);
            gemm(o, plen, n_out, kdata, (plen as isize, 1), &cols, (n_out as isize, 1), beta, &mut out);
            cols
        };
        let rg = self.tracked(input) || self.tracked(kernel) || bias.is_some_and(|b| self.tracked(b));
        // The patch matrix is only needed for a kernel gradient.
        let cols = if self.tracked(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor {
                shape: vec![o, ho, wo],
                data: out,
            },
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| if a >= 0.0 { a } else { slope * a }).collect();
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.tracked(x);
        self.push(t, Op::LeakyRelu { x, slope }, rg)
    }

    /// Bilinear ×2 upsampling with half-pixel centers and clamped borders.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let (ry, rx) = (upsample_taps(h), upsample_taps(w));
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut tmp = vec![0.0; h * w2];
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for r in 0..h {
                let s = &plane[r * w..(r + 1) * w];
                let d = &mut tmp[r * w2..(r + 1) * w2];
                for (dv, &(i0, i1, f)) in d.iter_mut().zip(&rx) {
                    *dv = (1.0 - f) * s[i0] + f * s[i1];
                }
            }
            let dst = &mut out[ch * h2 * w2..(ch + 1) * h2 * w2];
            for (orow, &(i0, i1, f)) in dst.chunks_exact_mut(w2).zip(&ry) {
                let a = &tmp[i0 * w2..(i0 + 1) * w2];
                let b = &tmp[i1 * w2..(i1 + 1) * w2];
                for ((dv, &av), &bv) in orow.iter_mut().zip(a).zip(b) {
                    *dv = (1.0 - f) * av + f * bv;
                }
            }
        }
        let rg = self.tracked(x);
        Ok(self.push(
            Tensor {
                shape: vec![c, h2, w2],
                data: out,
            },
            Op::Upsample2x { x },
            rg,
        ))
    }

    /// Stacks `a` and `b` along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(format!("concat of {ha}x{wa} with {hb}x{wb}")));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor {
                shape: vec![ca + cb, ha, wa],
                data,
            },
            Op::Concat { a, b },
            rg,
        ))
    }

    /// The `rows × cols` window starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, rows: usize, cols: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if top + rows > h || left + cols > w {
            return Err(Error::shape(format!(
                "crop {rows}x{cols} at ({top}, {left}) exceeds {h}x{w}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * rows * cols);
        for ch in 0..c {
            for r in top..top + rows {
                let start = (ch * h + r) * w + left;
                data.extend_from_slice(&src[start..start + cols]);
            }
        }
        let rg = self.tracked(x);
        Ok(self.push(
            Tensor {
                shape: vec![c, rows, cols],
                data,
            },
            Op::Crop { x, top, left },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(Error::shape(format!("operands {:?} and {:?}", va.shape, vb.shape)));
        }
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| f(a)).collect(),
        };
        let rg = self.tracked(x);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| c * a, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    /// `|x|`; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Back-propagates from a one-element `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        // Intermediate gradients are rebuilt on every pass.
        for n in &mut self.nodes[..=loss.0] {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        // Sized from the shape: the value buffer may be detached during backprop.
        let n = node.value.shape.iter().product();
        f(node.grad.get_or_insert_with(|| vec![0.0; n]));
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Temporarily detach the op so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => self.conv_backward(*input, *kernel, *bias, geom, cols, g),
            Op::LeakyRelu { x, slope } => {
                let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                self.accumulate(*x, |d| {
                    for ((dv, &gv), &a) in d.iter_mut().zip(g).zip(&xv) {
                        *dv += if a >= 0.0 { gv } else { slope * gv };
                    }
                });
                self.nodes[x.0].value.data = xv;
            }
            Op::Upsample2x { x } => {
                let (c, h, w) = self.nodes[x.0].value.chw().expect("rank 3");
                self.accumulate(*x, |d| upsample_backward(g, c, h, w, d));
            }
            Op::Concat { a, b } => {
                let na = self.nodes[a.0].value.len();
                self.accumulate(*a, |d| add_into(d, &g[..na]));
                self.accumulate(*b, |d| add_into(d, &g[na..]));
            }
            Op::Crop { x, top, left } => {
                let (c, h, w) = self.nodes[x.0].value.chw().expect("rank 3");
                let (_, rows, cols) = self.nodes[i].value.chw().expect("rank 3");
                self.accumulate(*x, |d| {
                    for ch in 0..c {
                        for r in 0..rows {
                            let dst = (ch * h + top + r) * w + left;
                            let src = (ch * rows + r) * cols;
                            add_into(&mut d[dst..dst + cols], &g[src..src + cols]);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |d| add_into(d, g));
                self.accumulate(*b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |d| add_into(d, g));
                self.accumulate(*b, |d| d.iter_mut().zip(g).for_each(|(dv, &gv)| *dv -= gv));
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.data.clone();
                let av = self.nodes[a.0].value.data.clone();
                self.accumulate(*a, |d| {
                    for ((dv, &gv), &y) in d.iter_mut().zip(g).zip(&bv) {
                        *dv += gv * y;
                    }
                });
                self.accumulate(*b, |d| {
                    for ((dv, &gv), &x) in d.iter_mut().zip(g).zip(&av) {
                        *dv += gv * x;
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(*x, |d| {
                for (dv, &gv) in d.iter_mut().zip(g) {
                    *dv += c * gv;
                }
            }),
            Op::Square(x) => {
                let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                self.accumulate(*x, |d| {
                    for ((dv, &gv), &a) in d.iter_mut().zip(g).zip(&xv) {
                        *dv += 2.0 * a * gv;
                    }
                });
                self.nodes[x.0].value.data = xv;
            }
            Op::Abs(x) => {
                let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                self.accumulate(*x, |d| {
                    for ((dv, &gv), &a) in d.iter_mut().zip(g).zip(&xv) {
                        if a > 0.0 {
                            *dv += gv;
                        } else if a < 0.0 {
                            *dv -= gv;
                        }
                    }
                });
                self.nodes[x.0].value.data = xv;
            }
            Op::Sum(x) => {
                let s = g[0];
                self.accumulate(*x, |d| d.iter_mut().for_each(|dv| *dv += s));
            }
        }
        self.nodes[i].op = op;
    }

    fn conv_backward(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: &ConvGeom, cols: &[f64], g: &[f64]) {
        let n_out = geom.out_len();
        let plen = geom.patch_len();
        let o = geom.o;

        if let Some(b) = bias {
            self.accumulate(b, |d| {
                for (dv, row) in d.iter_mut().zip(g.chunks_exact(n_out)) {
                    *dv += row.iter().sum::<f64>();
                }
            });
        }

        if self.tracked(kernel) {
            // dK[O, P] += dOut[O, N] · colsᵀ[N, P]
            let input_data = std::mem::take(&mut self.nodes[input.0].value.data);
            let patches: &[f64] = if geom.is_pointwise() { &input_data } else { cols };
            self.accumulate(kernel, |d| {
                gemm(o, n_out, plen, g, (n_out as isize, 1), patches, (1, n_out as isize), 1.0, d);
            });
            self.nodes[input.0].value.data = input_data;
        }

        if self.tracked(input) {
            // dCols[P, N] = Kᵀ[P, O] · dOut[O, N]
            let kdata = std::mem::take(&mut self.nodes[kernel.0].value.data);
            if geom.is_pointwise() {
                self.accumulate(input, |d| {
                    gemm(plen, o, n_out, &kdata, (1, plen as isize), g, (n_out as isize, 1), 1.0, d);
                });
            } else {
                let mut dcols = vec![0.0; plen * n_out];
                gemm(plen, o, n_out, &kdata, (1, plen as isize), g, (n_out as isize, 1), 0.0, &mut dcols);
                let (rt, ct) = geom.tables();
                self.accumulate(input, |d| col2im(&dcols, geom, &rt, &ct, d));
            }
            self.nodes[kernel.0].value.data = kdata;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// For each output position along an axis of length `n`: the two source
/// taps and the weight of the second. Source coordinate is `(o + 0.5)/2 − 0.5`
/// clamped to `[0, n − 1]`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn upsample_backward(g: &[f64], c: usize, h: usize, w: usize, d: &mut [f64]) {
    let (ry, rx) = (upsample_taps(h), upsample_taps(w));
    let w2 = 2 * w;
    let mut tmp = vec![0.0; h * w2];
    for ch in 0..c {
        tmp.fill(0.0);
        let gp = &g[ch * 4 * h * w..(ch + 1) * 4 * h * w];
        for (grow, &(i0, i1, f)) in gp.chunks_exact(w2).zip(&ry) {
            for (k, &gv) in grow.iter().enumerate() {
                tmp[i0 * w2 + k] += (1.0 - f) * gv;
                tmp[i1 * w2 + k] += f * gv;
            }
        }
        let dp = &mut d[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            let t = &tmp[r * w2..(r + 1) * w2];
            let drow = &mut dp[r * w..(r + 1) * w];
            for (&gv, &(i0, i1, f)) in t.iter().zip(&rx) {
                drow[i0] += (1.0 - f) * gv;
                drow[i1] += f * gv;
            }
        }
    }
}
