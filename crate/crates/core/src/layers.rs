//! Differentiable layer primitives.
//!
//! Every layer operates on a batch: the leading axis of its input is the batch
//! axis and the remaining axes are the per-sample shape (`[H, W, C]` for
//! images, `[F]` for flat features).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::{Param, Tensor};

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Square-kernel convolution with zero "same" padding (`kernel_size / 2`).
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    /// Max pooling over valid windows; trailing rows/columns that do not fill a
    /// window are dropped.
    MaxPool2d { window: usize, stride: usize },
    Dense { inputs: usize, units: usize },
    Relu,
    Dropout { rate: f64 },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_size: 3,
            stride: 1,
        }
    }

    pub fn pool2x2() -> Self {
        LayerSpec::MaxPool2d {
            window: 2,
            stride: 2,
        }
    }

    pub fn dense(inputs: usize, units: usize) -> Self {
        LayerSpec::Dense { inputs, units }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Per-sample output shape, or `None` when `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                if input.len() != 3 || input[2] != in_channels || kernel_size == 0 || stride == 0 {
                    return None;
                }
                let pad = kernel_size / 2;
                let oh = (input[0] + 2 * pad).checked_sub(kernel_size)? / stride + 1;
                let ow = (input[1] + 2 * pad).checked_sub(kernel_size)? / stride + 1;
                Some(vec![oh, ow, out_channels])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if input.len() != 3 || window == 0 || stride == 0 {
                    return None;
                }
                let oh = input[0].checked_sub(window)? / stride + 1;
                let ow = input[1].checked_sub(window)? / stride + 1;
                Some(vec![oh, ow, input[2]])
            }
            LayerSpec::Dense { inputs, units } => {
                (input == [inputs] && units > 0).then(|| vec![units])
            }
            LayerSpec::Relu => Some(input.to_vec()),
            LayerSpec::Dropout { rate } => ((0.0..1.0).contains(&rate)).then(|| input.to_vec()),
            LayerSpec::Flatten => Some(vec![input.iter().product()]),
            LayerSpec::Softmax => (input.len() == 1).then(|| input.to_vec()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    /// `[k, k, in, out]`, equivalently a `(k*k*in) x out` matrix.
    weight: Param,
    bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Vec<f64>,
    input_shape: Vec<usize>,
}

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn cols(&self) -> usize {
        self.k * self.k * self.c
    }
}

fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let width = g.cols();
    let mut cols = vec![0.0; g.rows() * width];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * width..(row + 1) * width];
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let off = (ky * g.k + kx) * g.c;
                        dst[off..off + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let width = g.cols();
    let mut dx = vec![0.0; g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src_row = &dcols[row * width..(row + 1) * width];
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let off = (ky * g.k + kx) * g.c;
                        for ch in 0..g.c {
                            dx[dst + ch] += src_row[off + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

impl Conv2d {
    fn geometry(&self, input_shape: &[usize]) -> ConvGeometry {
        let pad = self.kernel / 2;
        let (h, w) = (input_shape[1], input_shape[2]);
        ConvGeometry {
            n: input_shape[0],
            h,
            w,
            c: self.in_channels,
            oh: (h + 2 * pad - self.kernel) / self.stride + 1,
            ow: (w + 2 * pad - self.kernel) / self.stride + 1,
            k: self.kernel,
            stride: self.stride,
            pad,
        }
    }

    fn run(&self, x: &Tensor) -> (Tensor, ConvCache) {
        let g = self.geometry(x.shape());
        let cols = im2col(x.data(), &g);
        let mut out = vec![0.0; g.rows() * self.out_channels];
        for r in out.chunks_mut(self.out_channels) {
            r.copy_from_slice(self.bias.value.data());
        }
        gemm(
            g.rows(),
            g.cols(),
            self.out_channels,
            &cols,
            false,
            self.weight.value.data(),
            false,
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![g.n, g.oh, g.ow, self.out_channels], out)
            .expect("conv output shape");
        (
            out,
            ConvCache {
                cols,
                input_shape: x.shape().to_vec(),
            },
        )
    }

    fn backward(&mut self, grad: &Tensor) -> Option<Tensor> {
        let cache = self.cache.take()?;
        let g = self.geometry(&cache.input_shape);
        let gd = grad.data();
        gemm(
            g.cols(),
            g.rows(),
            self.out_channels,
            &cache.cols,
            true,
            gd,
            false,
            1.0,
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for r in gd.chunks(self.out_channels) {
            for (d, v) in db.iter_mut().zip(r) {
                *d += v;
            }
        }
        let mut dcols = vec![0.0; g.rows() * g.cols()];
        gemm(
            g.rows(),
            self.out_channels,
            g.cols(),
            gd,
            false,
            self.weight.value.data(),
            true,
            0.0,
            &mut dcols,
        );
        Some(Tensor::new(cache.input_shape, col2im(&dcols, &g)).expect("conv input shape"))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    inputs: usize,
    units: usize,
    /// `[inputs, units]`
    weight: Param,
    bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    fn run(&self, x: &Tensor) -> Tensor {
        let n = x.shape()[0];
        let mut out = vec![0.0; n * self.units];
        for r in out.chunks_mut(self.units) {
            r.copy_from_slice(self.bias.value.data());
        }
        gemm(
            n,
            self.inputs,
            self.units,
            x.data(),
            false,
            self.weight.value.data(),
            false,
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, self.units], out).expect("dense output shape")
    }

    fn backward(&mut self, grad: &Tensor) -> Option<Tensor> {
        let x = self.cache.take()?;
        let n = x.shape()[0];
        let gd = grad.data();
        gemm(
            self.inputs,
            n,
            self.units,
            x.data(),
            true,
            gd,
            false,
            1.0,
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for r in gd.chunks(self.units) {
            for (d, v) in db.iter_mut().zip(r) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(
            n,
            self.units,
            self.inputs,
            gd,
            false,
            self.weight.value.data(),
            true,
            0.0,
            &mut dx,
        );
        Some(Tensor::new(vec![n, self.inputs], dx).expect("dense input shape"))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MaxPool2d {
    window: usize,
    stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    /// Returns the pooled tensor and, per output element, the flat input index
    /// of the first maximal element of its window.
    fn run(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let s = x.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let oh = (h - self.window) / self.stride + 1;
        let ow = (w - self.window) / self.stride + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for dy in 0..self.window {
                            for dx in 0..self.window {
                                let iy = oy * self.stride + dy;
                                let ix = ox * self.stride + dx;
                                let idx = ((b * h + iy) * w + ix) * c + ch;
                                if best_idx == usize::MAX || xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        (
            Tensor::new(vec![n, oh, ow, c], out).expect("pool output shape"),
            argmax,
        )
    }

    fn backward(&mut self, grad: &Tensor) -> Option<Tensor> {
        let (argmax, input_shape) = self.cache.take()?;
        let mut dx = Tensor::zeros(&input_shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad.data()) {
            d[idx] += g;
        }
        Some(dx)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Dense(Dense),
    Relu(Option<Tensor>),
    Dropout { rate: f64, mask: Option<Vec<f64>> },
    Flatten(Option<Vec<usize>>),
    Softmax(Option<Tensor>),
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        .expect("init shape")
}

impl Layer {
    /// Instantiates a layer. Weights are zero-mean normal with standard deviation
    /// `sqrt(2 / fan_in)` when the layer feeds a ReLU and `sqrt(1 / fan_in)`
    /// otherwise; biases start at zero.
    pub(crate) fn build(spec: &LayerSpec, feeds_relu: bool, rng: &mut ChaCha8Rng) -> Layer {
        let gain = if feeds_relu { 2.0 } else { 1.0 };
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                let fan_in = kernel_size * kernel_size * in_channels;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel: kernel_size,
                    stride,
                    weight: Param::new(normal_tensor(
                        &[kernel_size, kernel_size, in_channels, out_channels],
                        (gain / fan_in as f64).sqrt(),
                        rng,
                    )),
                    bias: Param::new(Tensor::zeros(&[out_channels])),
                    cache: None,
                })
            }
            LayerSpec::MaxPool2d { window, stride } => Layer::MaxPool2d(MaxPool2d {
                window,
                stride,
                cache: None,
            }),
            LayerSpec::Dense { inputs, units } => Layer::Dense(Dense {
                inputs,
                units,
                weight: Param::new(normal_tensor(
                    &[inputs, units],
                    (gain / inputs as f64).sqrt(),
                    rng,
                )),
                bias: Param::new(Tensor::zeros(&[units])),
                cache: None,
            }),
            LayerSpec::Relu => Layer::Relu(None),
            LayerSpec::Dropout { rate } => Layer::Dropout { rate, mask: None },
            LayerSpec::Flatten => Layer::Flatten(None),
            LayerSpec::Softmax => Layer::Softmax(None),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Inference-mode forward: no caching, dropout is the identity.
    pub(crate) fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d(c) => c.run(x).0,
            Layer::MaxPool2d(p) => p.run(x).0,
            Layer::Dense(d) => d.run(x),
            Layer::Relu(_) => x.map(|v| v.max(0.0)),
            Layer::Dropout { .. } => x.clone(),
            Layer::Flatten(_) => flatten(x),
            Layer::Softmax(_) => softmax_rows(x),
        }
    }

    /// Training-mode forward: caches what `backward` needs.
    pub(crate) fn forward_train(&mut self, x: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        match self {
            Layer::Conv2d(c) => {
                let (out, cache) = c.run(x);
                c.cache = Some(cache);
                out
            }
            Layer::MaxPool2d(p) => {
                let (out, argmax) = p.run(x);
                p.cache = Some((argmax, x.shape().to_vec()));
                out
            }
            Layer::Dense(d) => {
                let out = d.run(x);
                d.cache = Some(x.clone());
                out
            }
            Layer::Relu(cache) => {
                *cache = Some(x.clone());
                x.map(|v| v.max(0.0))
            }
            Layer::Dropout { rate, mask } => {
                let keep = 1.0 / (1.0 - *rate);
                let m: Vec<f64> = (0..x.len())
                    .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                let mut out = x.clone();
                out.data_mut().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                *mask = Some(m);
                out
            }
            Layer::Flatten(cache) => {
                *cache = Some(x.shape().to_vec());
                flatten(x)
            }
            Layer::Softmax(cache) => {
                let y = softmax_rows(x);
                *cache = Some(y.clone());
                y
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient, or
    /// `None` when no training-mode forward pass is cached.
    pub(crate) fn backward(&mut self, grad: &Tensor) -> Option<Tensor> {
        match self {
            Layer::Conv2d(c) => c.backward(grad),
            Layer::MaxPool2d(p) => p.backward(grad),
            Layer::Dense(d) => d.backward(grad),
            Layer::Relu(cache) => {
                let x = cache.take()?;
                let mut dx = grad.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(x.data())
                    .for_each(|(g, &v)| {
                        if v <= 0.0 {
                            *g = 0.0
                        }
                    });
                Some(dx)
            }
            Layer::Dropout { mask, .. } => {
                let m = mask.take()?;
                let mut dx = grad.clone();
                dx.data_mut().iter_mut().zip(&m).for_each(|(g, k)| *g *= k);
                Some(dx)
            }
            Layer::Flatten(cache) => {
                let shape = cache.take()?;
                Some(grad.clone().reshape(shape).expect("flatten shape"))
            }
            Layer::Softmax(cache) => {
                let y = cache.take()?;
                let cols = *y.shape().last().expect("softmax rank");
                let mut dx = grad.clone();
                for (dr, yr) in dx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    dr.iter_mut().zip(yr).for_each(|(g, &y)| *g = y * (*g - dot));
                }
                Some(dx)
            }
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(c) => c.cache = None,
            Layer::MaxPool2d(p) => p.cache = None,
            Layer::Dense(d) => d.cache = None,
            Layer::Relu(c) | Layer::Softmax(c) => *c = None,
            Layer::Dropout { mask, .. } => *mask = None,
            Layer::Flatten(c) => *c = None,
        }
    }
}

fn flatten(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let f = x.len() / n;
    x.clone().reshape(vec![n, f]).expect("flatten shape")
}

/// Row-wise softmax over the last axis, stabilized by subtracting the row max.
fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = *x.shape().last().expect("non-scalar");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Softmax of a 1-D logit vector or each row of a 2-D batch.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() > 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax expects 1-D or 2-D logits, got {:?}",
            logits.shape()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidArgument("softmax logits must be finite".into()));
    }
    Ok(softmax_rows(logits))
}

/// Max pooling of an `[H, W, C]` image or an `[N, H, W, C]` batch with a square
/// window and the given stride.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let spec = LayerSpec::MaxPool2d { window, stride };
    let (batched, sample) = match input.shape().len() {
        3 => (false, input.shape()),
        4 => (true, &input.shape()[1..]),
        _ => {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: vec![0, 0, 0],
                actual: input.shape().to_vec(),
            })
        }
    };
    let out_shape = spec.output_shape(sample).ok_or_else(|| Error::ShapeMismatch {
        layer: 0,
        expected: vec![window, window, sample.get(2).copied().unwrap_or(1)],
        actual: sample.to_vec(),
    })?;
    let x = if batched {
        input.clone()
    } else {
        let mut s = vec![1];
        s.extend_from_slice(sample);
        input.clone().reshape(s)?
    };
    let pool = MaxPool2d {
        window,
        stride,
        cache: None,
    };
    let (out, _) = pool.run(&x);
    if batched {
        Ok(out)
    } else {
        out.reshape(out_shape)
    }
}
