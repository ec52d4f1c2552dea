//! Layer kinds, their forward maps and hand-derived backward maps.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture description of one layer, without weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Stride-1 convolution with "same" zero padding for odd kernels.
    pub fn conv_same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = chw(input)?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "conv expects {in_channels} input channels, got {c} (input {input:?})"
                    )));
                }
                if stride == 0 || kernel == 0 {
                    return Err(Error::Shape("conv stride and kernel must be positive".into()));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Shape(format!(
                        "kernel {kernel} larger than padded input {input:?}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::MaxPool2 => {
                let [c, h, w] = chw(input)?;
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("max-pool input too small: {input:?}")));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = chw(input)?;
                Ok(vec![c])
            }
            LayerSpec::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::Shape(format!(
                        "dense expects {inputs} inputs, got {n} (input {input:?})"
                    )));
                }
                Ok(vec![outputs])
            }
        }
    }
}

fn chw(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!("expected C×H×W input, got {shape:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense(Dense),
    Softmax,
}

impl Layer {
    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let fan_in = in_channels * kernel * kernel;
                let shape = [out_channels, in_channels, kernel, kernel];
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight: he_normal(&shape, fan_in, rng),
                    bias: Tensor::zeros(&[out_channels]),
                })
            }
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs,
                outputs,
                weight: he_normal(&[outputs, inputs], inputs, rng),
                bias: Tensor::zeros(&[outputs]),
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Softmax => Layer::Softmax,
        }
    }

    /// Layer with all-zero parameters.
    pub fn zeroed(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                bias: Tensor::zeros(&[out_channels]),
            }),
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs,
                outputs,
                weight: Tensor::zeros(&[outputs, inputs]),
                bias: Tensor::zeros(&[outputs]),
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Softmax => Layer::Softmax,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2 => LayerSpec::MaxPool2,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_tensor_count(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Dense(_) => 2,
            _ => 0,
        }
    }

    /// Forward map; the caller guarantees `x` has the shape this layer accepts.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
            Layer::MaxPool2 => max_pool_forward(x),
            Layer::GlobalAvgPool => {
                let c = x.shape()[0];
                let data = (0..c)
                    .map(|i| {
                        let ch = x.channel(i);
                        ch.iter().sum::<f64>() / ch.len() as f64
                    })
                    .collect();
                Tensor::new(vec![c], data).expect("channel vector")
            }
            Layer::Softmax => softmax_tensor(x),
        }
    }

    /// Backpropagates `gy` (gradient w.r.t. this layer's output `y`, which was
    /// produced from input `x`). Parameter gradients are accumulated into
    /// `grads` when given, in the order of [`Layer::params`].
    pub fn backward(&self, x: &Tensor, y: &Tensor, gy: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        match self {
            Layer::Conv2d(c) => c.backward(x, gy, grads),
            Layer::Dense(d) => d.backward(x, gy, grads),
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
            Layer::MaxPool2 => max_pool_backward(x, gy),
            Layer::GlobalAvgPool => {
                let mut gx = Tensor::zeros(x.shape());
                let plane = x.len() / x.shape()[0];
                for (c, &g) in gy.data().iter().enumerate() {
                    let v = g / plane as f64;
                    gx.channel_mut(c).iter_mut().for_each(|e| *e = v);
                }
                gx
            }
            Layer::Softmax => {
                let p = y.data();
                let dot: f64 = p.iter().zip(gy.data()).map(|(a, b)| a * b).sum();
                let data = p.iter().zip(gy.data()).map(|(&pi, &gi)| pi * (gi - dot)).collect();
                Tensor::new(y.shape().to_vec(), data).expect("same shape")
            }
        }
    }
}

fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl Conv2d {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Unfolds `x` into a `(C·k·k) × (OH·OW)` patch matrix.
    fn im2col(&self, x: &Tensor) -> (Vec<f64>, usize, usize) {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![0.0; c * k * k * p];
        let xd = x.data();
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ci * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = (ci * h + iy as usize) * w;
                        let dst = row + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                cols[dst + ox] = xd[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    fn col2im(&self, cols: &[f64], shape: &[usize]) -> Tensor {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let p = oh * ow;
        let mut gx = Tensor::zeros(shape);
        let gd = gx.data_mut();
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ci * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = (ci * h + iy as usize) * w;
                        let src = row + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                gd[dst + ix as usize] += cols[src + ox];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (cols, oh, ow) = self.im2col(x);
        let p = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let mut out = vec![0.0; self.out_channels * p];
        for (o, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(self.bias.data()[o]);
        }
        gemm(self.out_channels, ckk, p, self.weight.data(), false, &cols, false, 1.0, &mut out);
        Tensor::new(vec![self.out_channels, oh, ow], out).expect("conv output")
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        let (cols, oh, ow) = self.im2col(x);
        let p = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let g = gy.data();
        if let Some(grads) = grads {
            let (gw, gb) = grads.split_at_mut(1);
            gemm(self.out_channels, p, ckk, g, false, &cols, true, 1.0, gw[0].data_mut());
            for (o, b) in gb[0].data_mut().iter_mut().enumerate() {
                *b += g[o * p..(o + 1) * p].iter().sum::<f64>();
            }
        }
        let mut gcols = vec![0.0; ckk * p];
        gemm(ckk, self.out_channels, p, self.weight.data(), true, g, false, 0.0, &mut gcols);
        self.col2im(&gcols, x.shape())
    }
}

impl Dense {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = self.bias.data().to_vec();
        gemm(self.outputs, self.inputs, 1, self.weight.data(), false, x.data(), false, 1.0, &mut out);
        Tensor::new(vec![self.outputs], out).expect("dense output")
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        let g = gy.data();
        if let Some(grads) = grads {
            let (gw, gb) = grads.split_at_mut(1);
            gemm(self.outputs, 1, self.inputs, g, false, x.data(), false, 1.0, gw[0].data_mut());
            for (b, gi) in gb[0].data_mut().iter_mut().zip(g) {
                *b += gi;
            }
        }
        let mut gx = vec![0.0; self.inputs];
        gemm(self.inputs, self.outputs, 1, self.weight.data(), true, g, false, 0.0, &mut gx);
        Tensor::new(x.shape().to_vec(), gx).expect("dense input grad")
    }
}

fn max_pool_forward(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ci * h + 2 * oy) * w + 2 * ox;
                let m = xd[base].max(xd[base + 1]).max(xd[base + w]).max(xd[base + w + 1]);
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("pool output")
}

fn max_pool_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut gx = Tensor::zeros(x.shape());
    let gd = gx.data_mut();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ci * h + 2 * oy) * w + 2 * ox;
                // first maximal element in scan order receives the gradient
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                gd[best] += gy.data()[(ci * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

/// Numerically stable softmax of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn softmax_tensor(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), softmax(x.data())).expect("same shape")
}
