//! Layer Conductance attributions and instance embeddings.
//!
//! Conductance of hidden unit `h` for logit `F_c` along the straight path from
//! a baseline `x'` to `x` is approximated with `steps` interpolants
//! `x_k = x' + (k / steps)(x - x')`:
//!
//! ```text
//! cond(h) = sum_k  dF_c/dh (x_k) * (h(x_k) - h(x_{k-1}))
//! ```
//!
//! Summed over all units of a layer this telescopes towards `F_c(x) - F_c(x')`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Domain, TensorModel};
use crate::tensor::Tensor;

pub const DEFAULT_PIPELINE_STEPS: usize = 32;
pub const VERIFICATION_STEPS: usize = 512;

/// Conductance for several layers at once, sharing the forward/backward passes.
/// Returned vectors follow the order of `layers`.
pub fn conductance_layers(
    model: &TensorModel,
    input: &[f32],
    baseline: &[f32],
    target_class: usize,
    layers: &[usize],
    steps: usize,
) -> Result<Vec<Vec<f32>>> {
    if steps == 0 {
        return Err(Error::precondition("steps must be >= 1"));
    }
    if input.len() != baseline.len() || input.len() != model.input_len() {
        return Err(Error::ShapeMismatch {
            expected: model.input_shape().to_vec(),
            actual: vec![input.len(), baseline.len()],
        });
    }
    model.validate_class(target_class)?;
    for &l in layers {
        model.validate_hidden_layer(l)?;
    }
    let mut prev = model.forward_all(baseline)?;
    let mut acc: Vec<Vec<f64>> = layers.iter().map(|&l| vec![0.0; prev[l].len()]).collect();
    let mut point = vec![0.0f32; input.len()];
    for k in 1..=steps {
        if k == steps {
            point.copy_from_slice(input);
        } else {
            let t = k as f32 / steps as f32;
            for ((p, &x), &b) in point.iter_mut().zip(input).zip(baseline) {
                *p = b + t * (x - b);
            }
        }
        let (acts, grads) = model.activations_and_grads(&point, target_class, layers)?;
        for ((slot, &l), g) in acc.iter_mut().zip(layers).zip(&grads) {
            for ((c, gv), (a, p)) in slot.iter_mut().zip(g).zip(acts[l].iter().zip(&prev[l])) {
                *c += f64::from(*gv) * f64::from(a - p);
            }
        }
        prev = acts;
    }
    acc.into_iter()
        .zip(layers)
        .map(|(v, &l)| {
            let out: Vec<f32> = v.into_iter().map(|c| c as f32).collect();
            if out.iter().any(|c| !c.is_finite()) {
                Err(Error::NonFinite { layer: l })
            } else {
                Ok(out)
            }
        })
        .collect()
}

/// Per-element conductance of layer `layer` for the pre-softmax logit `target_class`.
pub fn layer_conductance(
    model: &TensorModel,
    input: &Tensor,
    baseline: &Tensor,
    target_class: usize,
    layer: usize,
    steps: usize,
) -> Result<Tensor> {
    if input.shape() != baseline.shape() {
        return Err(Error::ShapeMismatch {
            expected: input.shape().to_vec(),
            actual: baseline.shape().to_vec(),
        });
    }
    let x = model.validate_instance(input)?;
    let b = model.validate_instance(baseline)?;
    let mut out = conductance_layers(model, &x, &b, target_class, &[layer], steps)?;
    Tensor::new(model.layer_shape(layer).to_vec(), out.pop().unwrap_or_default())
}

/// Reduce conductance to one value per neuron: spatial max per channel for
/// `C × H × W` maps, unchanged for dense vectors.
pub fn channel_attribution(conductance: &Tensor) -> Vec<f32> {
    reduce(conductance.data(), conductance.shape())
}

fn reduce(values: &[f32], shape: &[usize]) -> Vec<f32> {
    match shape {
        [c, h, w] => (0..*c)
            .map(|ch| {
                values[ch * h * w..(ch + 1) * h * w]
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max)
            })
            .collect(),
        _ => values.to_vec(),
    }
}

/// Attribution of every neuron in one layer over one class's instances:
/// `values[j * cols + p]` is neuron `j` on instance `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub class_id: usize,
    pub layer: usize,
    pub model: Domain,
    pub steps: usize,
    pub rows: usize,
    pub cols: usize,
    pub neuron_ids: Vec<usize>,
    pub instance_ids: Vec<usize>,
    #[serde(skip)]
    pub values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct MatrixBody {
    class_id: usize,
    layer: usize,
    model: Domain,
    steps: usize,
    baseline: String,
    neuron_ids: Vec<usize>,
    instance_ids: Vec<usize>,
}

impl AttributionMatrix {
    pub fn from_columns(
        class_id: usize,
        layer: usize,
        model: Domain,
        steps: usize,
        columns: &[Vec<f32>],
        instance_ids: Vec<usize>,
    ) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if cols == 0 || rows == 0 || columns.iter().any(|c| c.len() != rows) || instance_ids.len() != cols {
            return Err(Error::precondition("attribution columns must be non-empty and equally sized"));
        }
        let mut values = vec![0.0f32; rows * cols];
        for (p, col) in columns.iter().enumerate() {
            for (j, &v) in col.iter().enumerate() {
                values[j * cols + p] = v;
            }
        }
        Ok(Self {
            class_id,
            layer,
            model,
            steps,
            rows,
            cols,
            neuron_ids: (0..rows).collect(),
            instance_ids,
            values,
        })
    }

    pub fn row(&self, neuron: usize) -> &[f32] {
        &self.values[neuron * self.cols..(neuron + 1) * self.cols]
    }

    pub fn get(&self, neuron: usize, instance: usize) -> f32 {
        self.values[neuron * self.cols + instance]
    }

    pub fn column(&self, instance: usize) -> Vec<f32> {
        (0..self.rows).map(|j| self.get(j, instance)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = MatrixBody {
            class_id: self.class_id,
            layer: self.layer,
            model: self.model,
            steps: self.steps,
            baseline: "zeros".into(),
            neuron_ids: self.neuron_ids.clone(),
            instance_ids: self.instance_ids.clone(),
        };
        let t = Tensor::new(vec![self.rows, self.cols], self.values.clone())?;
        container::encode("attribution", &body, &[("values", &t)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = container::decode::<MatrixBody>(bytes, "attribution")?;
        let t = d.take("values")?;
        let [rows, cols] = *t.shape() else {
            return Err(Error::Format("attribution values must be 2-D".into()));
        };
        let b = d.body;
        if b.neuron_ids.len() != rows || b.instance_ids.len() != cols {
            return Err(Error::Format("attribution ids do not match matrix shape".into()));
        }
        Ok(Self {
            class_id: b.class_id,
            layer: b.layer,
            model: b.model,
            steps: b.steps,
            rows,
            cols,
            neuron_ids: b.neuron_ids,
            instance_ids: b.instance_ids,
            values: t.into_data(),
        })
    }
}

/// Per-neuron attributions (after channel reduction) of every instance in
/// `data` for each layer in `layers`: `result[layer_slot][instance]`.
pub fn neuron_attributions(
    model: &TensorModel,
    data: &LabeledDataset,
    target_class: usize,
    layers: &[usize],
    steps: usize,
) -> Result<Vec<Vec<Vec<f32>>>> {
    let baseline = vec![0.0f32; model.input_len()];
    let per_instance: Vec<Vec<Vec<f32>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let cond = conductance_layers(model, data.instance(i), &baseline, target_class, layers, steps)?;
            Ok(cond
                .iter()
                .zip(layers)
                .map(|(c, &l)| reduce(c, model.layer_shape(l)))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..layers.len())
        .map(|slot| per_instance.iter().map(|inst| inst[slot].clone()).collect())
        .collect())
}

/// Attribution matrices for several layers over the instances of `class_id`
/// in `data` (the target dataset), with a zero baseline.
pub fn build_attribution_matrices(
    model: &TensorModel,
    data: &LabeledDataset,
    class_id: usize,
    layers: &[usize],
    steps: usize,
) -> Result<Vec<AttributionMatrix>> {
    let members = data.class_indices(class_id);
    if members.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }
    let subset = data.subset(&members)?;
    let per_layer = neuron_attributions(model, &subset, class_id, layers, steps)?;
    per_layer
        .iter()
        .zip(layers)
        .map(|(columns, &l)| {
            AttributionMatrix::from_columns(class_id, l, model.meta.domain, steps, columns, subset.ids().to_vec())
        })
        .collect()
}

pub fn build_attribution_matrix(
    model: &TensorModel,
    data: &LabeledDataset,
    class_id: usize,
    layer: usize,
    steps: usize,
) -> Result<AttributionMatrix> {
    let mut v = build_attribution_matrices(model, data, class_id, &[layer], steps)?;
    Ok(v.remove(0))
}

/// Flattened activations entering the first dense layer, one row per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub instance_ids: Vec<usize>,
    /// Model layer whose output is embedded (`None` when the first dense layer reads the raw input).
    pub layer: Option<usize>,
    pub dim: usize,
    pub vectors: Vec<f32>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Concatenate two sets with the same dimensionality.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        if self.dim != other.dim {
            return Err(Error::precondition("embedding dimensions differ"));
        }
        let mut out = self.clone();
        out.instance_ids.extend_from_slice(&other.instance_ids);
        out.vectors.extend_from_slice(&other.vectors);
        Ok(out)
    }
}

pub fn extract_embeddings(model: &TensorModel, data: &LabeledDataset) -> Result<EmbeddingSet> {
    let dense = model
        .first_dense_layer()
        .ok_or_else(|| Error::Architecture("model has no dense layer".into()))?;
    let (layer, dim, vectors) = if dense == 0 {
        (None, model.input_len(), data.instances().data().to_vec())
    } else {
        let captured = dense - 1;
        let mut trace = model.forward_with_trace(data.instances(), &[captured])?;
        let acts = trace.activations.remove(&captured).expect("captured layer");
        let dim = model.layer_shape(captured).iter().product();
        (Some(captured), dim, acts.into_data())
    };
    Ok(EmbeddingSet {
        instance_ids: data.ids().to_vec(),
        layer,
        dim,
        vectors,
    })
}
