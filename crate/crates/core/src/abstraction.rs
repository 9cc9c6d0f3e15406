//! Important neurons (fractional-rank aggregation of attributions) and important
//! weights (per-instance top-k activated strengths, counted over a class).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMatrix;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{correlate2d, Domain, ForwardTrace, LayerSpec, TensorModel};

/// Ranks `1..=n` in ascending value order; tied values share the mean of the
/// ranks they cover.
pub fn fractional_rank(values: &[f32]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = shared;
        }
        start = end;
    }
    ranks
}

/// Column-wise fractional ranks of an attribution matrix, same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl RankMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.values[r * self.cols..(r + 1) * self.cols].iter().sum())
            .collect()
    }
}

pub fn fractional_rank_columns(a: &AttributionMatrix) -> Result<RankMatrix> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::precondition("attribution matrix is empty"));
    }
    let mut values = vec![0.0; a.rows * a.cols];
    for p in 0..a.cols {
        for (j, r) in fractional_rank(&a.column(p)).into_iter().enumerate() {
            values[j * a.cols + p] = r;
        }
    }
    Ok(RankMatrix {
        rows: a.rows,
        cols: a.cols,
        values,
    })
}

/// `ceil(n / 10)`: the top tenth of a layer, at least one neuron.
pub fn important_neuron_count(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronRanking {
    pub class_id: usize,
    pub layer: usize,
    pub model: Domain,
    pub aggregated_rank: Vec<f64>,
    /// Neuron ids by descending aggregated rank (ties: lower id first), truncated to `k`.
    pub important: Vec<usize>,
    pub k: usize,
}

impl NeuronRanking {
    /// All neuron ids by descending aggregated rank.
    pub fn order(&self) -> Vec<usize> {
        order_desc(&self.aggregated_rank)
    }

    /// 1-based position of `neuron` in [`Self::order`].
    pub fn position(&self, neuron: usize) -> Option<usize> {
        self.order().iter().position(|&n| n == neuron).map(|p| p + 1)
    }

    pub fn is_important(&self, neuron: usize) -> bool {
        self.important.contains(&neuron)
    }
}

fn order_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

pub fn extract_important_neurons(a: &AttributionMatrix) -> Result<NeuronRanking> {
    let ranks = fractional_rank_columns(a)?;
    let aggregated_rank = ranks.row_sums();
    let k = important_neuron_count(a.rows);
    let mut important = order_desc(&aggregated_rank);
    important.truncate(k);
    Ok(NeuronRanking {
        class_id: a.class_id,
        layer: a.layer,
        model: a.model,
        aggregated_rank,
        important,
        k,
    })
}

/// Two consecutive parameterized layers (model layer indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerPair {
    pub from: usize,
    pub to: usize,
}

/// Pairs of consecutive entries of `layers` (which must be parameterized layers, in order).
pub fn layer_pairs(layers: &[usize]) -> Vec<LayerPair> {
    layers
        .windows(2)
        .map(|w| LayerPair { from: w[0], to: w[1] })
        .collect()
}

/// How a conv weight's activated map is reduced over spatial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialReduction {
    #[default]
    Max,
    Sum,
}

fn validate_pair(model: &TensorModel, pair: LayerPair) -> Result<(usize, usize)> {
    let layers = model.layers();
    let not_param = || Error::NotParameterized {
        from: pair.from,
        to: pair.to,
    };
    if pair.from >= pair.to || pair.to >= layers.len() {
        return Err(not_param());
    }
    if !layers[pair.from].spec.is_parameterized() || !layers[pair.to].spec.is_parameterized() {
        return Err(not_param());
    }
    if layers[pair.from + 1..pair.to].iter().any(|l| l.spec.is_parameterized()) {
        return Err(not_param());
    }
    let n_from = model.neuron_count(pair.from);
    let n_to = model.neuron_count(pair.to);
    Ok((n_from, n_to))
}

/// Activated level of every weight group `(p, q)` for one instance, given the
/// input `activation` consumed by layer `pair.to`. Index is `p * n_to + q`.
pub fn strengths_from_input(
    model: &TensorModel,
    pair: LayerPair,
    activation: &[f32],
    reduction: SpatialReduction,
) -> Result<Vec<f32>> {
    let (n_from, n_to) = validate_pair(model, pair)?;
    let in_shape = model.layer_input_shape(pair.to);
    let layer = &model.layers()[pair.to];
    let weight = layer.params.as_ref().expect("parameterized").weight.data();
    let mut out = vec![0.0f32; n_from * n_to];
    match layer.spec {
        LayerSpec::Conv2d {
            in_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (h, w) = (in_shape[1], in_shape[2]);
            for p in 0..n_from {
                let chan = &activation[p * h * w..(p + 1) * h * w];
                for q in 0..n_to {
                    let kbase = (q * in_channels + p) * kernel * kernel;
                    let k = &weight[kbase..kbase + kernel * kernel];
                    let (map, _, _) = correlate2d(chan, h, w, k, kernel, stride, padding);
                    out[p * n_to + q] = match reduction {
                        SpatialReduction::Max => map.iter().fold(0.0f32, |m, v| m.max(v.abs())),
                        SpatialReduction::Sum => map.iter().map(|v| v.abs()).sum(),
                    };
                }
            }
        }
        LayerSpec::Dense { in_features, .. } => {
            if in_features % n_from != 0 {
                return Err(Error::Architecture(format!(
                    "dense layer {} fan-in {in_features} is not a multiple of {n_from} neurons",
                    pair.to
                )));
            }
            let group = in_features / n_from;
            for q in 0..n_to {
                let row = &weight[q * in_features..(q + 1) * in_features];
                for p in 0..n_from {
                    let s = p * group;
                    let v: f32 = crate::nn::dot(&row[s..s + group], &activation[s..s + group]);
                    out[p * n_to + q] = v.abs();
                }
            }
        }
        _ => unreachable!("validated parameterized"),
    }
    Ok(out)
}

/// Strengths for instance `instance` of a trace that captured layer `pair.to - 1`.
pub fn weight_strengths(
    model: &TensorModel,
    trace: &ForwardTrace,
    pair: LayerPair,
    instance: usize,
    reduction: SpatialReduction,
) -> Result<Vec<f32>> {
    validate_pair(model, pair)?;
    let captured = pair.to - 1;
    let acts = trace.activations.get(&captured).ok_or_else(|| {
        Error::precondition(format!("trace does not contain layer {captured} activations"))
    })?;
    strengths_from_input(model, pair, acts.outer(instance), reduction)
}

/// Indices of the `k` largest values (ties: lower index first), in that order.
pub fn top_k_indices<T: Copy + PartialOrd>(values: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// `ceil(0.05 * n_from * n_to)`.
pub fn default_k_row(n_from: usize, n_to: usize) -> usize {
    (n_from * n_to).div_ceil(20).max(1)
}

pub fn default_k_w(k_row: usize) -> usize {
    k_row.min(50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportantWeight {
    pub from: usize,
    pub to: usize,
    pub count: u32,
    pub strength: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightImportance {
    pub class_id: usize,
    pub pair: LayerPair,
    pub model: Domain,
    pub n_from: usize,
    pub n_to: usize,
    pub instances: usize,
    pub k_row: usize,
    pub k_w: usize,
    pub reduction: SpatialReduction,
    /// How many instances had `(p, q)` among their top `k_row` strengths.
    pub counts: Vec<u32>,
    /// Mean activated strength of `(p, q)` over the class instances.
    pub mean_strength: Vec<f32>,
    pub important: Vec<ImportantWeight>,
}

impl WeightImportance {
    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.important.iter().any(|w| w.from == from && w.to == to)
    }
}

/// Mark each instance's top `k_row` strengths and sum the marks.
pub fn count_marks(per_instance: &[Vec<f32>], k_row: usize) -> Vec<u32> {
    let len = per_instance.first().map_or(0, Vec::len);
    let mut counts = vec![0u32; len];
    for s in per_instance {
        for idx in top_k_indices(s, k_row) {
            counts[idx] += 1;
        }
    }
    counts
}

/// Selection over precomputed per-instance strengths.
pub fn select_important_weights(
    per_instance: &[Vec<f32>],
    n_from: usize,
    n_to: usize,
    k_row: usize,
    k_w: usize,
) -> Result<(Vec<u32>, Vec<f32>, Vec<ImportantWeight>)> {
    if per_instance.is_empty() {
        return Err(Error::precondition("no instances to count"));
    }
    let total = n_from * n_to;
    if per_instance.iter().any(|s| s.len() != total) {
        return Err(Error::precondition("strength vectors must have n_from * n_to entries"));
    }
    let k_row = k_row.min(total);
    let k_w = k_w.min(total);
    let counts = count_marks(per_instance, k_row);
    let mut mean = vec![0.0f64; total];
    for s in per_instance {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += f64::from(v);
        }
    }
    let mean: Vec<f32> = mean
        .iter()
        .map(|m| (m / per_instance.len() as f64) as f32)
        .collect();
    let important = top_k_indices(&counts, k_w)
        .into_iter()
        .map(|idx| ImportantWeight {
            from: idx / n_to,
            to: idx % n_to,
            count: counts[idx],
            strength: mean[idx],
        })
        .collect();
    Ok((counts, mean, important))
}

#[allow(clippy::too_many_arguments)]
pub fn extract_important_weights(
    model: &TensorModel,
    data: &LabeledDataset,
    class_id: usize,
    pair: LayerPair,
    k_row: Option<usize>,
    k_w: Option<usize>,
    reduction: SpatialReduction,
) -> Result<WeightImportance> {
    let (n_from, n_to) = validate_pair(model, pair)?;
    let members = data.class_indices(class_id);
    if members.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }
    let captured = pair.to - 1;
    let per_instance: Vec<Vec<f32>> = members
        .par_iter()
        .map(|&i| {
            let acts = model.forward_all(data.instance(i))?;
            strengths_from_input(model, pair, &acts[captured], reduction)
        })
        .collect::<Result<_>>()?;
    let k_row = k_row.unwrap_or_else(|| default_k_row(n_from, n_to)).min(n_from * n_to);
    let k_w = k_w.unwrap_or_else(|| default_k_w(k_row)).min(n_from * n_to);
    let (counts, mean_strength, important) = select_important_weights(&per_instance, n_from, n_to, k_row, k_w)?;
    Ok(WeightImportance {
        class_id,
        pair,
        model: model.meta.domain,
        n_from,
        n_to,
        instances: members.len(),
        k_row,
        k_w,
        reduction,
        counts,
        mean_strength,
        important,
    })
}
