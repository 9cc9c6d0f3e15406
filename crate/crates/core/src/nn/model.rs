use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerSpec, Params};
use crate::tensor::Tensor;

/// Which side of the transfer a model or dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

/// Accuracy bookkeeping for one training epoch. Series that were not
/// requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub source_train: Option<f64>,
    pub target_train: Option<f64>,
    pub own_val: Option<f64>,
    pub target_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub domain: Domain,
    pub history: Vec<EpochRecord>,
}

/// Layered feed-forward CNN/MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorModel {
    pub meta: ModelMeta,
    input_shape: Vec<usize>,
    class_count: usize,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

/// Convolutional trunk plus dense head. Every conv block is
/// conv(3×3, pad 1) → relu → maxpool(2); every hidden dense layer is followed by relu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub conv_channels: Vec<usize>,
    pub hidden_units: Vec<usize>,
}

impl Architecture {
    pub fn reference() -> Self {
        Self {
            conv_channels: vec![8, 16],
            hidden_units: vec![64],
        }
    }

    pub fn layer_specs(&self, input_shape: &[usize], class_count: usize) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::new();
        let mut shape = input_shape.to_vec();
        for &ch in &self.conv_channels {
            let in_ch = *shape
                .first()
                .ok_or_else(|| Error::Architecture("empty input shape".into()))?;
            for spec in [LayerSpec::conv(in_ch, ch, 3, 1), LayerSpec::Relu, LayerSpec::pool(2)] {
                shape = spec.output_shape(&shape)?;
                specs.push(spec);
            }
        }
        if shape.len() > 1 {
            specs.push(LayerSpec::Flatten);
            shape = vec![shape.iter().product()];
        }
        let mut features = shape[0];
        for &units in &self.hidden_units {
            specs.push(LayerSpec::dense(features, units));
            specs.push(LayerSpec::Relu);
            features = units;
        }
        specs.push(LayerSpec::dense(features, class_count));
        Ok(specs)
    }
}

/// Captured activations (batched along the leading axis), logits and argmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: BTreeMap<usize, Tensor>,
    pub logits: Tensor,
    pub predicted: Vec<usize>,
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl TensorModel {
    /// Build a model with seeded He-uniform weights and zero biases.
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        input_shape: Vec<usize>,
        specs: Vec<LayerSpec>,
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| Layer {
                spec,
                params: spec.param_shapes().map(|(ws, bs)| he_uniform(&spec, ws, bs, &mut rng)),
            })
            .collect();
        Self::from_parts(
            ModelMeta {
                name: name.into(),
                domain,
                history: Vec::new(),
            },
            input_shape,
            class_count,
            layers,
        )
    }

    pub fn with_architecture(
        name: impl Into<String>,
        domain: Domain,
        arch: &Architecture,
        input_shape: Vec<usize>,
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let specs = arch.layer_specs(&input_shape, class_count)?;
        Self::new(name, domain, input_shape, specs, class_count, seed)
    }

    /// Assemble a model from explicit layers, validating every invariant.
    pub fn from_parts(
        meta: ModelMeta,
        input_shape: Vec<usize>,
        class_count: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Architecture("class count must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Architecture("model has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.spec.output_shape(&shape).map_err(|e| {
                Error::Architecture(format!("layer {i} ({}) incompatible: {e}", layer.spec.name()))
            })?;
            match (layer.spec.param_shapes(), &layer.params) {
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(Error::Architecture(format!(
                            "layer {i} parameter shapes {:?}/{:?} do not match spec {ws:?}/{bs:?}",
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Architecture(format!(
                        "layer {i} ({}) parameter presence does not match its kind",
                        layer.spec.name()
                    )))
                }
            }
            shapes.push(shape.clone());
        }
        match layers.last().map(|l| l.spec) {
            Some(LayerSpec::Dense { out_features, .. }) if out_features == class_count => {}
            _ => {
                return Err(Error::Architecture(format!(
                    "last layer must be dense with {class_count} outputs"
                )))
            }
        }
        Ok(Self {
            meta,
            input_shape,
            class_count,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Per-instance output shape of layer `index`.
    pub fn layer_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    /// Per-instance shape of the input consumed by layer `index`.
    pub fn layer_input_shape(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input_shape
        } else {
            &self.shapes[index - 1]
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Indices of conv/dense layers, in order.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].spec.is_parameterized())
            .collect()
    }

    /// Number of neurons (channels or units) a layer output exposes.
    pub fn neuron_count(&self, index: usize) -> usize {
        self.shapes[index][0]
    }

    pub fn first_dense_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l.spec, LayerSpec::Dense { .. }))
    }

    fn check_layer(&self, index: usize) -> Result<()> {
        if index >= self.layers.len() {
            return Err(Error::InvalidLayer {
                index,
                count: self.layers.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::InvalidClass {
                class,
                count: self.class_count,
            });
        }
        Ok(())
    }

    /// Accept either a single instance or a batch of one.
    fn single_instance<'a>(&self, input: &'a Tensor) -> Result<&'a [f32]> {
        let s = input.shape();
        if s == self.input_shape.as_slice() || (s.len() == self.input_shape.len() + 1 && s[0] == 1 && s[1..] == self.input_shape[..]) {
            Ok(input.data())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: s.to_vec(),
            })
        }
    }

    fn batch_len(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Outputs of every layer for a single instance.
    pub(crate) fn forward_all(&self, x: &[f32]) -> Result<Vec<Vec<f32>>> {
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let out = layer.forward(input, self.layer_input_shape(i));
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Logits for a single instance without keeping intermediate activations.
    pub(crate) fn logits_single(&self, x: &[f32]) -> Result<Vec<f32>> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur, self.layer_input_shape(i));
            if cur.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(cur)
    }

    /// Batched logits (`N × class_count`).
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.batch_len(batch)?;
        let rows: Vec<Vec<f32>> = (0..n)
            .into_par_iter()
            .map(|i| self.logits_single(batch.outer(i)))
            .collect::<Result<_>>()?;
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        Tensor::stack(&[self.class_count], &refs)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok((0..logits.shape()[0]).map(|i| argmax(logits.outer(i))).collect())
    }

    /// Forward pass that also returns the outputs of the layers in `capture`.
    pub fn forward_with_trace(&self, batch: &Tensor, capture: &[usize]) -> Result<ForwardTrace> {
        for &c in capture {
            self.check_layer(c)?;
        }
        let n = self.batch_len(batch)?;
        let per_instance: Vec<Vec<Vec<f32>>> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_all(batch.outer(i)))
            .collect::<Result<_>>()?;
        let last = self.layers.len() - 1;
        let mut activations = BTreeMap::new();
        for &c in capture {
            let items: Vec<&[f32]> = per_instance.iter().map(|a| a[c].as_slice()).collect();
            activations.insert(c, Tensor::stack(&self.shapes[c], &items)?);
        }
        let items: Vec<&[f32]> = per_instance.iter().map(|a| a[last].as_slice()).collect();
        let logits = Tensor::stack(&[self.class_count], &items)?;
        let predicted = (0..n).map(|i| argmax(logits.outer(i))).collect();
        Ok(ForwardTrace {
            activations,
            logits,
            predicted,
        })
    }

    /// Reverse pass from `grad_logits` down to layer `stop`. `on_grad(i, g)` sees
    /// the gradient with respect to the output of every layer `i >= stop`.
    pub(crate) fn backprop(
        &self,
        x: &[f32],
        acts: &[Vec<f32>],
        grad_logits: Vec<f32>,
        stop: usize,
        mut param_grads: Option<&mut [Option<Params>]>,
        mut on_grad: impl FnMut(usize, &[f32]),
    ) {
        let mut grad = grad_logits;
        for i in (stop..self.layers.len()).rev() {
            on_grad(i, &grad);
            if i == stop && param_grads.is_none() {
                break;
            }
            let input = if i == 0 { x } else { &acts[i - 1] };
            let pg = param_grads.as_deref_mut().and_then(|v| v[i].as_mut());
            grad = self.layers[i].backward(input, self.layer_input_shape(i), &grad, pg);
        }
    }

    /// Forward pass plus gradients of the pre-softmax logit `class` with respect to
    /// the outputs of each layer in `layers`.
    pub(crate) fn activations_and_grads(
        &self,
        x: &[f32],
        class: usize,
        layers: &[usize],
    ) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let acts = self.forward_all(x)?;
        let stop = layers.iter().copied().min().unwrap_or(0);
        let mut one_hot = vec![0.0f32; self.class_count];
        one_hot[class] = 1.0;
        let mut grads = vec![Vec::new(); layers.len()];
        self.backprop(x, &acts, one_hot, stop, None, |i, g| {
            for (slot, &l) in layers.iter().enumerate() {
                if l == i {
                    grads[slot] = g.to_vec();
                }
            }
        });
        Ok((acts, grads))
    }

    /// Gradient of the pre-softmax logit for `target_class` with respect to the
    /// output of layer `layer`. The final layer is excluded.
    pub fn grad_wrt_layer(&self, input: &Tensor, target_class: usize, layer: usize) -> Result<Tensor> {
        self.check_class(target_class)?;
        if layer + 1 >= self.layers.len() {
            return Err(Error::InvalidLayer {
                index: layer,
                count: self.layers.len() - 1,
            });
        }
        let x = self.single_instance(input)?;
        let (_, mut grads) = self.activations_and_grads(x, target_class, &[layer])?;
        Tensor::new(self.shapes[layer].clone(), grads.pop().unwrap_or_default())
    }

    pub(crate) fn validate_class(&self, class: usize) -> Result<()> {
        self.check_class(class)
    }

    pub(crate) fn validate_hidden_layer(&self, layer: usize) -> Result<()> {
        if layer + 1 >= self.layers.len() {
            return Err(Error::InvalidLayer {
                index: layer,
                count: self.layers.len() - 1,
            });
        }
        Ok(())
    }

    pub(crate) fn validate_instance(&self, input: &Tensor) -> Result<Vec<f32>> {
        self.single_instance(input).map(<[f32]>::to_vec)
    }
}

fn he_uniform(spec: &LayerSpec, weight_shape: Vec<usize>, bias_shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Params {
    let bound = (6.0 / spec.fan_in().max(1) as f64).sqrt() as f32;
    let len: usize = weight_shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Params {
        weight: Tensor::new(weight_shape, data).expect("weight shape"),
        bias: Tensor::zeros(bias_shape),
    }
}
