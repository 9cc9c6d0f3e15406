//! Straightforward f64 re-implementations used as oracles.

use tlens_core::nn::{LayerSpec, TensorModel};

/// Copy of a model's architecture and parameters in f64.
#[derive(Clone)]
pub struct Net64 {
    pub input_shape: Vec<usize>,
    pub specs: Vec<LayerSpec>,
    /// `(weight, bias)` per layer.
    pub params: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

impl Net64 {
    pub fn from_model(m: &TensorModel) -> Self {
        Self {
            input_shape: m.input_shape().to_vec(),
            specs: m.layers().iter().map(|l| l.spec).collect(),
            params: m
                .layers()
                .iter()
                .map(|l| l.params.as_ref().map(|p| (widen(p.weight.data()), widen(p.bias.data()))))
                .collect(),
        }
    }

    /// Output of every layer for input `x`.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut shape = self.input_shape.clone();
        let mut cur = x.to_vec();
        let mut outs = Vec::with_capacity(self.specs.len());
        for i in 0..self.specs.len() {
            (cur, shape) = self.layer(i, &cur, &shape);
            outs.push(cur.clone());
        }
        outs
    }

    /// Logits when the output of layer `start` is replaced by `value`.
    pub fn forward_from(&self, start: usize, value: &[f64]) -> Vec<f64> {
        let mut shape = self.input_shape.clone();
        for i in 0..=start {
            shape = self.specs[i].output_shape(&shape).unwrap();
        }
        let mut cur = value.to_vec();
        for i in start + 1..self.specs.len() {
            (cur, shape) = self.layer(i, &cur, &shape);
        }
        cur
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        let z = self.logits(x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[label]
    }

    fn layer(&self, i: usize, input: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let out_shape = self.specs[i].output_shape(shape).unwrap();
        let out = match self.specs[i] {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (w, b) = self.params[i].as_ref().unwrap();
                let (h, wd) = (shape[1] as isize, shape[2] as isize);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut s = b[o];
                            for c in 0..in_channels {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (y * stride + ky) as isize - padding as isize;
                                        let ix = (x * stride + kx) as isize - padding as isize;
                                        if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        let wv = w[((o * in_channels + c) * kernel + ky) * kernel + kx];
                                        s += wv * input[(c * h as usize + iy as usize) * wd as usize + ix as usize];
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + x] = s;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool2d { size, stride } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = vec![f64::NEG_INFINITY; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            for dy in 0..size {
                                for dx in 0..size {
                                    let v = input[(ch * h + y * stride + dy) * w + x * stride + dx];
                                    let o = &mut out[(ch * oh + y) * ow + x];
                                    *o = o.max(v);
                                }
                            }
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
                let (w, b) = self.params[i].as_ref().unwrap();
                (0..out_features)
                    .map(|o| b[o] + (0..in_features).map(|k| w[o * in_features + k] * input[k]).sum::<f64>())
                    .collect()
            }
        };
        (out, out_shape)
    }
}

/// Central finite-difference gradient of the loss with respect to every parameter.
pub fn fd_param_gradients(net: &Net64, x: &[f64], label: usize, eps: f64) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
    let mut probe = net.clone();
    (0..net.specs.len())
        .map(|i| {
            let (w, b) = net.params[i].as_ref()?;
            let mut diff = |which: usize, len: usize| -> Vec<f64> {
                (0..len)
                    .map(|k| {
                        let set = |p: &mut Net64, v: f64| {
                            let slot = p.params[i].as_mut().unwrap();
                            if which == 0 {
                                slot.0[k] = v;
                            } else {
                                slot.1[k] = v;
                            }
                        };
                        let orig = if which == 0 { w[k] } else { b[k] };
                        set(&mut probe, orig + eps);
                        let up = probe.loss(x, label);
                        set(&mut probe, orig - eps);
                        let down = probe.loss(x, label);
                        set(&mut probe, orig);
                        (up - down) / (2.0 * eps)
                    })
                    .collect()
            };
            Some((diff(0, w.len()), diff(1, b.len())))
        })
        .collect()
}

/// Central finite-difference gradient of logit `class` with respect to the output of `layer`.
pub fn fd_layer_gradient(net: &Net64, x: &[f64], class: usize, layer: usize, eps: f64) -> Vec<f64> {
    let mut value = net.forward(x)[layer].clone();
    (0..value.len())
        .map(|k| {
            let orig = value[k];
            value[k] = orig + eps;
            let up = net.forward_from(layer, &value)[class];
            value[k] = orig - eps;
            let down = net.forward_from(layer, &value)[class];
            value[k] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Ascending ranks with ties sharing the mean of the ranks they cover.
pub fn brute_ranks(col: &[f32]) -> Vec<f64> {
    col.iter()
        .map(|&v| {
            let below = col.iter().filter(|&&o| o < v).count() as f64;
            let equal = col.iter().filter(|&&o| o == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Indices of the `k` largest values, ties to the lower index, by counting
/// how many entries beat each one.
pub fn brute_top_k<T: PartialOrd>(values: &[T], k: usize) -> Vec<usize> {
    let place = |i: usize| {
        (0..values.len())
            .filter(|&j| values[j] > values[i] || (values[j] == values[i] && j < i))
            .count()
    };
    let mut out = vec![usize::MAX; k.min(values.len())];
    for i in 0..values.len() {
        let p = place(i);
        if p < out.len() {
            out[p] = i;
        }
    }
    out
}

/// Activated strength of every `(p, q)` weight group of the layer `to`,
/// given the activation it consumes; index `p * n_to + q`.
pub fn brute_strengths(net: &Net64, to: usize, in_shape: &[usize], activation: &[f64], n_from: usize, sum: bool) -> Vec<f64> {
    let (w, _) = net.params[to].as_ref().unwrap();
    match net.specs[to] {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (h, wd) = (in_shape[1] as isize, in_shape[2] as isize);
            let oh = (in_shape[1] + 2 * padding - kernel) / stride + 1;
            let ow = (in_shape[2] + 2 * padding - kernel) / stride + 1;
            let mut out = Vec::new();
            for p in 0..in_channels {
                for q in 0..out_channels {
                    let mut acc = 0.0f64;
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut s = 0.0;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (y * stride + ky) as isize - padding as isize;
                                    let ix = (x * stride + kx) as isize - padding as isize;
                                    if iy >= 0 && ix >= 0 && iy < h && ix < wd {
                                        s += w[((q * in_channels + p) * kernel + ky) * kernel + kx]
                                            * activation[(p * h as usize + iy as usize) * wd as usize + ix as usize];
                                    }
                                }
                            }
                            acc = if sum { acc + s.abs() } else { acc.max(s.abs()) };
                        }
                    }
                    out.push(acc);
                }
            }
            out
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let group = in_features / n_from;
            let mut out = Vec::new();
            for p in 0..n_from {
                for q in 0..out_features {
                    let s: f64 = (p * group..(p + 1) * group).map(|k| w[q * in_features + k] * activation[k]).sum();
                    out.push(s.abs());
                }
            }
            out
        }
        _ => panic!("layer {to} has no weights"),
    }
}

pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Leading eigenvector of the sample covariance from a dense symmetric eigensolver.
pub fn eigen_first_component(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let x = nalgebra::DMatrix::from_row_slice(rows, cols, values);
    let mean = x.row_mean();
    let centered = nalgebra::DMatrix::from_fn(rows, cols, |r, c| x[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (rows as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iamax();
    eig.eigenvectors.column(top).iter().copied().collect()
}
