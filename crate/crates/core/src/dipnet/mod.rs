//! The encoder-decoder skip network, its random input, and the training loop.
//!
//! For `scales = S` the network is
//!
//! ```text
//! level i = 1..S   down_i: conv3x3/2 + act, conv3x3 + act      skip_i: conv1x1
//! level i = S..1   up_i:   conv3x3 + act on [skip_i, up_{i+1}], upsample x2
//! head:            conv1x1, no output activation
//! ```
//!
//! where the deepest level sees `skip_S` alone. Inputs whose sides are not
//! multiples of `2^S` are reflect-padded and the output is cropped back.

mod train;

pub use train::{
    train, MaskMode, TrainConfig, TrainLog, TrainOutcome, TrainRecord, TRAIN_LOG_COLUMNS, TRAIN_LOG_SCHEMA,
};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::image_io::reflect;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub scales: usize,
    pub down_filters: usize,
    pub up_filters: usize,
    pub skip_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation_slope: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            scales: 2,
            down_filters: 32,
            up_filters: 32,
            skip_filters: 2,
            in_channels: 1,
            out_channels: 1,
            activation_slope: 0.01,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.scales,
            self.down_filters,
            self.up_filters,
            self.skip_filters,
            self.in_channels,
            self.out_channels,
        ];
        if counts.contains(&0) {
            return Err(Error::BadParams(format!("network sizes must be at least 1: {self:?}")));
        }
        if !self.activation_slope.is_finite() {
            return Err(Error::BadParams("activation slope must be finite".into()));
        }
        Ok(())
    }

    /// Multiple of which every network input side must be.
    pub fn divisor(&self) -> usize {
        1 << self.scales
    }
}

/// One convolution: `[out, in, k, k]` kernel plus bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k + self.out_ch
    }
}

/// Layer list in parameter order: per level down-a, down-b, skip; then the
/// decoder from the deepest level up; then the head.
pub fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    let conv = |in_ch, out_ch, k, stride| LayerSpec { in_ch, out_ch, k, stride };
    let mut v = Vec::new();
    for level in 0..cfg.scales {
        let cin = if level == 0 { cfg.in_channels } else { cfg.down_filters };
        v.push(conv(cin, cfg.down_filters, 3, 2));
        v.push(conv(cfg.down_filters, cfg.down_filters, 3, 1));
        v.push(conv(cfg.down_filters, cfg.skip_filters, 1, 1));
    }
    for level in (0..cfg.scales).rev() {
        let cin = if level + 1 == cfg.scales {
            cfg.skip_filters
        } else {
            cfg.skip_filters + cfg.up_filters
        };
        v.push(conv(cin, cfg.up_filters, 3, 1));
    }
    v.push(conv(cfg.up_filters, cfg.out_channels, 1, 1));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipNet {
    pub cfg: NetConfig,
    layers: Vec<LayerSpec>,
    /// Kernel and bias of each layer, interleaved.
    params: Vec<Tensor>,
}

/// Builds the network with He-uniform weights scaled for the leaky
/// activation, `±√(6 / ((1 + slope²)·fan_in))`, and zero biases. The head
/// starts at zero, so training begins from a constant output while the
/// hidden features keep unit-scale spatial variation.
pub fn build_skip_net(cfg: &NetConfig) -> Result<SkipNet> {
    cfg.validate()?;
    let layers = layer_specs(cfg);
    let gain2 = 2.0 / (1.0 + cfg.activation_slope.powi(2));
    let mut params = Vec::with_capacity(2 * layers.len());
    for (i, l) in layers.iter().enumerate() {
        let mut rng = stream(cfg.seed, Domain::NetInit, i as u64);
        let bound = (3.0 * gain2 / (l.in_ch * l.k * l.k) as f64).sqrt();
        let kn = l.out_ch * l.in_ch * l.k * l.k;
        let kernel = if i + 1 == layers.len() {
            vec![0.0; kn]
        } else {
            (0..kn).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let bias = vec![0.0; l.out_ch];
        params.push(Tensor::new(&[l.out_ch, l.in_ch, l.k, l.k], kernel)?);
        params.push(Tensor::new(&[l.out_ch], bias)?);
    }
    Ok(SkipNet {
        cfg: *cfg,
        layers,
        params,
    })
}

impl SkipNet {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the graph as a trainable leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Runs the network on a `[in_channels, H, W]` input of any size ≥ 2.
    /// `params` are the handles returned by [`SkipNet::register`].
    pub fn forward(&self, g: &mut Graph, input: Var, params: &[Var]) -> Result<Var> {
        let (_, h, w) = g.value(input).chw()?;
        let padded = pad_to_multiple(g.value(input), self.cfg.divisor())?;
        let (top, left) = ((padded.shape()[1] - h) / 2, (padded.shape()[2] - w) / 2);
        let x = if padded.shape() == g.value(input).shape() {
            input
        } else {
            g.constant(padded)
        };
        let out = self.forward_padded(g, x, params)?;
        if (top, left) == (0, 0) && g.value(out).shape()[1..] == [h, w] {
            Ok(out)
        } else {
            g.crop(out, top, left, h, w)
        }
    }

    fn forward_padded(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let slope = self.cfg.activation_slope;
        let s = self.cfg.scales;
        let mut layer = 0;
        let mut conv = |g: &mut Graph, x: Var, act: bool| -> Result<Var> {
            let l = self.layers[layer];
            let y = g.conv2d(x, params[2 * layer], Some(params[2 * layer + 1]), l.stride)?;
            layer += 1;
            Ok(if act { g.leaky_relu(y, slope) } else { y })
        };

        let mut skips = Vec::with_capacity(s);
        let mut h = x;
        for _ in 0..s {
            h = conv(g, h, true)?;
            h = conv(g, h, true)?;
            skips.push(conv(g, h, false)?);
        }
        let mut up: Option<Var> = None;
        for level in (0..s).rev() {
            let inp = match up {
                None => skips[level],
                Some(u) => g.concat(skips[level], u)?,
            };
            let y = conv(g, inp, true)?;
            up = Some(g.upsample2x(y)?);
        }
        conv(g, up.expect("scales >= 1"), false)
    }

    /// Output for a fixed input, without keeping gradients.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, x, &params)?;
        Ok(g.value(out).clone())
    }
}

/// Centered reflection padding of the spatial sides up to a multiple of `m`.
pub fn pad_to_multiple(t: &Tensor, m: usize) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    let (h2, w2) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (h2, w2) == (h, w) {
        return Ok(t.clone());
    }
    let (top, left) = ((h2 - h) / 2, (w2 - w) / 2);
    let src = t.data();
    let mut data = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        for r in 0..h2 {
            let sr = reflect(r as isize - top as isize, h);
            for col in 0..w2 {
                let sc = reflect(col as isize - left as isize, w);
                data.push(src[(ch * h + sr) * w + sc]);
            }
        }
    }
    Tensor::new(&[c, h2, w2], data)
}

/// I.i.d. standard normal input field of shape `[1, rows, cols]`.
pub fn sample_input_z(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Domain::InputZ, 0);
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new(&[1, rows, cols], data).expect("shape matches")
}

/// `z_base + std · N(0, 1)`, drawn from a stream keyed by `(seed, iteration)`.
pub fn perturb_input(z_base: &Tensor, reg_noise_std: f64, seed: u64, iteration: u64) -> Tensor {
    if reg_noise_std == 0.0 {
        return z_base.clone();
    }
    let mut rng = stream(seed, Domain::Perturb, iteration);
    let mut out = z_base.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += reg_noise_std * n;
    }
    out
}
