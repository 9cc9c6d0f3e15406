use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture description of a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    #[serde(rename = "conv2d")]
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { size: usize, stride: usize },
    #[serde(rename = "flatten")]
    Flatten,
    #[serde(rename = "dense")]
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    pub fn pool(size: usize) -> Self {
        LayerSpec::MaxPool2d { size, stride: size }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Shapes of the (weight, bias) tensors, if any.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }

    /// Per-instance output shape for a per-instance input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(mismatch(vec![in_channels, 0, 0]));
                };
                if c != in_channels || stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel
                {
                    return Err(mismatch(vec![in_channels, h, w]));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { size, stride } => {
                let [c, h, w] = *input else {
                    return Err(mismatch(vec![0, size, size]));
                };
                if h < size || w < size || stride == 0 || size == 0 {
                    return Err(mismatch(vec![c, size, size]));
                }
                Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(mismatch(vec![in_features]));
                }
                Ok(vec![out_features])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }
}

/// A layer of a [`crate::nn::TensorModel`]: its spec plus parameters for conv/dense.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<Params>,
}

/// Output index range `[start, end)` for which `o * stride + offset - pad` lies in `[0, len)`.
fn valid_range(out_len: usize, in_len: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let start = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    // largest o with o*stride + offset - pad <= in_len - 1
    let limit = in_len + pad;
    let end = if offset >= limit {
        0
    } else {
        ((limit - 1 - offset) / stride + 1).min(out_len)
    };
    (start, end.max(start))
}

/// Single-channel 2-D correlation of `input` (h×w) with `kernel` (k×k).
pub fn correlate2d(
    input: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; oh * ow];
    for ky in 0..k {
        let (y0, y1) = valid_range(oh, h, ky, stride, pad);
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            if wv == 0.0 {
                continue;
            }
            let (x0, x1) = valid_range(ow, w, kx, stride, pad);
            for y in y0..y1 {
                let iy = y * stride + ky - pad;
                let in_row = &input[iy * w..(iy + 1) * w];
                let out_row = &mut out[y * ow..(y + 1) * ow];
                for x in x0..x1 {
                    out_row[x] += wv * in_row[x * stride + kx - pad];
                }
            }
        }
    }
    (out, oh, ow)
}

impl Layer {
    pub fn forward(&self, input: &[f32], in_shape: &[usize]) -> Vec<f32> {
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let p = self.params.as_ref().expect("conv layer without params");
                let (h, w) = (in_shape[1], in_shape[2]);
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let wt = p.weight.data();
                let mut out = vec![0.0f32; out_channels * oh * ow];
                for o in 0..out_channels {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.fill(p.bias.data()[o]);
                    for c in 0..in_channels {
                        let chan = &input[c * h * w..(c + 1) * h * w];
                        let kbase = (o * in_channels + c) * kernel * kernel;
                        for ky in 0..kernel {
                            let (y0, y1) = valid_range(oh, h, ky, stride, padding);
                            for kx in 0..kernel {
                                let wv = wt[kbase + ky * kernel + kx];
                                let (x0, x1) = valid_range(ow, w, kx, stride, padding);
                                for y in y0..y1 {
                                    let iy = y * stride + ky - padding;
                                    let in_row = &chan[iy * w..(iy + 1) * w];
                                    let out_row = &mut plane[y * ow..(y + 1) * ow];
                                    for x in x0..x1 {
                                        out_row[x] += wv * in_row[x * stride + kx - padding];
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool2d { size, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    let chan = &input[ch * h * w..(ch + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            let idx = pool_argmax(chan, w, y * stride, x * stride, size);
                            out.push(chan[idx]);
                        }
                    }
                }
                out
            }
            LayerSpec::Flatten => input.to_vec(),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let p = self.params.as_ref().expect("dense layer without params");
                let wt = p.weight.data();
                (0..out_features)
                    .map(|o| {
                        let row = &wt[o * in_features..(o + 1) * in_features];
                        p.bias.data()[o] + dot(row, input)
                    })
                    .collect()
            }
        }
    }

    /// Propagate `grad_out` back to the layer input. Parameter gradients are
    /// accumulated into `param_grads` when given.
    pub fn backward(
        &self,
        input: &[f32],
        in_shape: &[usize],
        grad_out: &[f32],
        param_grads: Option<&mut Params>,
    ) -> Vec<f32> {
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let p = self.params.as_ref().expect("conv layer without params");
                let (h, w) = (in_shape[1], in_shape[2]);
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let wt = p.weight.data();
                let mut grad_in = vec![0.0f32; in_channels * h * w];
                let mut pg = param_grads;
                for o in 0..out_channels {
                    let g_plane = &grad_out[o * oh * ow..(o + 1) * oh * ow];
                    if let Some(g) = pg.as_deref_mut() {
                        g.bias.data_mut()[o] += g_plane.iter().sum::<f32>();
                    }
                    for c in 0..in_channels {
                        let chan = &input[c * h * w..(c + 1) * h * w];
                        let gin = &mut grad_in[c * h * w..(c + 1) * h * w];
                        let kbase = (o * in_channels + c) * kernel * kernel;
                        for ky in 0..kernel {
                            let (y0, y1) = valid_range(oh, h, ky, stride, padding);
                            for kx in 0..kernel {
                                let wv = wt[kbase + ky * kernel + kx];
                                let (x0, x1) = valid_range(ow, w, kx, stride, padding);
                                let mut gw = 0.0f32;
                                for y in y0..y1 {
                                    let iy = y * stride + ky - padding;
                                    let g_row = &g_plane[y * ow..(y + 1) * ow];
                                    let in_row = &chan[iy * w..(iy + 1) * w];
                                    let gin_row = &mut gin[iy * w..(iy + 1) * w];
                                    for x in x0..x1 {
                                        let ix = x * stride + kx - padding;
                                        gin_row[ix] += wv * g_row[x];
                                        gw += in_row[ix] * g_row[x];
                                    }
                                }
                                if let Some(g) = pg.as_deref_mut() {
                                    g.weight.data_mut()[kbase + ky * kernel + kx] += gw;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            LayerSpec::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool2d { size, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut grad_in = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    let chan = &input[ch * h * w..(ch + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            let idx = pool_argmax(chan, w, y * stride, x * stride, size);
                            grad_in[ch * h * w + idx] += grad_out[(ch * oh + y) * ow + x];
                        }
                    }
                }
                grad_in
            }
            LayerSpec::Flatten => grad_out.to_vec(),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let p = self.params.as_ref().expect("dense layer without params");
                let wt = p.weight.data();
                let mut grad_in = vec![0.0f32; in_features];
                for o in 0..out_features {
                    let g = grad_out[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &wt[o * in_features..(o + 1) * in_features];
                    for (gi, &wv) in grad_in.iter_mut().zip(row) {
                        *gi += wv * g;
                    }
                }
                if let Some(pg) = param_grads {
                    for o in 0..out_features {
                        let g = grad_out[o];
                        pg.bias.data_mut()[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let row = &mut pg.weight.data_mut()[o * in_features..(o + 1) * in_features];
                        for (gw, &x) in row.iter_mut().zip(input) {
                            *gw += x * g;
                        }
                    }
                }
                grad_in
            }
        }
    }
}

/// Flat index (within the channel plane) of the first maximum in a pooling window.
fn pool_argmax(chan: &[f32], w: usize, y0: usize, x0: usize, size: usize) -> usize {
    let mut best = y0 * w + x0;
    for dy in 0..size {
        for dx in 0..size {
            let idx = (y0 + dy) * w + x0 + dx;
            if chan[idx] > chan[best] {
                best = idx;
            }
        }
    }
    best
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
