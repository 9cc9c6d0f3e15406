use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate_accuracy;
use crate::nn::layer::{LayerSpec, Params};
use crate::nn::model::{Domain, EpochRecord, TensorModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Datasets evaluated after every epoch; the accuracy series feed the metrics view.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSets<'a> {
    pub source_train: Option<&'a LabeledDataset>,
    pub target_train: Option<&'a LabeledDataset>,
    pub own_val: Option<&'a LabeledDataset>,
    pub target_val: Option<&'a LabeledDataset>,
}

/// Softmax cross-entropy of `logits` against `label`, with its gradient.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label] as f64;
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| (e / sum - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    (loss, grad)
}

fn zero_grads(model: &TensorModel) -> Vec<Option<Params>> {
    model
        .layers()
        .iter()
        .map(|l| l.params.as_ref().map(Params::zeros_like))
        .collect()
}

/// Cross-entropy of one instance and its gradient with respect to every
/// layer's parameters (`None` for parameter-free layers).
pub fn loss_gradients(model: &TensorModel, x: &[f32], label: usize) -> Result<(f64, Vec<Option<Params>>)> {
    if x.len() != model.input_len() {
        return Err(Error::ShapeMismatch {
            expected: model.input_shape().to_vec(),
            actual: vec![x.len()],
        });
    }
    if label >= model.class_count() {
        return Err(Error::precondition(format!("label {label} out of range")));
    }
    let acts = model.forward_all(x)?;
    let (loss, grad_logits) = softmax_cross_entropy(acts.last().expect("layers"), label);
    let mut grads = zero_grads(model);
    model.backprop(x, &acts, grad_logits, 0, Some(&mut grads), |_, _| {});
    Ok((loss, grads))
}

/// Mini-batch SGD on cross-entropy. Deterministic for a fixed seed: per-sample
/// gradients may be computed in parallel but are summed in batch order.
pub fn train(
    model: &TensorModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    eval: &EvalSets<'_>,
) -> Result<(TensorModel, Vec<EpochRecord>)> {
    if data.is_empty() {
        return Err(Error::precondition("training data is empty"));
    }
    if cfg.epochs == 0 {
        return Err(Error::precondition("epochs must be >= 1"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::precondition("batch size must be >= 1"));
    }
    if data.class_count() > model.class_count() {
        return Err(Error::precondition(format!(
            "dataset has {} classes but the model only {}",
            data.class_count(),
            model.class_count()
        )));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let start_epoch = model.meta.history.len();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<Result<(f64, Vec<Option<Params>>)>> = batch
                .par_iter()
                .map(|&i| loss_gradients(&model, data.instance(i), data.labels()[i]))
                .collect();
            let mut total = zero_grads(&model);
            for item in per_sample {
                let (loss, grads) = item.map_err(|_| Error::Diverged {
                    epoch: start_epoch + epoch,
                    loss: f64::NAN,
                })?;
                epoch_loss += loss;
                for (acc, g) in total.iter_mut().zip(grads) {
                    if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                        add_assign(acc.weight.data_mut(), g.weight.data());
                        add_assign(acc.bias.data_mut(), g.bias.data());
                    }
                }
            }
            let scale = cfg.lr / batch.len() as f32;
            for (layer, g) in model.layers_mut().iter_mut().zip(&total) {
                if let (Some(p), Some(g)) = (layer.params.as_mut(), g.as_ref()) {
                    sgd_step(p.weight.data_mut(), g.weight.data(), scale);
                    sgd_step(p.bias.data_mut(), g.bias.data(), scale);
                }
            }
        }
        let mean_loss = epoch_loss / data.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: start_epoch + epoch,
                loss: mean_loss,
            });
        }
        let acc = |d: Option<&LabeledDataset>| d.map(|d| evaluate_accuracy(&model, d)).transpose();
        let record = EpochRecord {
            epoch: start_epoch + epoch,
            loss: mean_loss,
            source_train: acc(eval.source_train)?,
            target_train: acc(eval.target_train)?,
            own_val: acc(eval.own_val)?,
            target_val: acc(eval.target_val)?,
        };
        model.meta.history.push(record.clone());
        records.push(record);
    }
    Ok((model, records))
}

fn add_assign(acc: &mut [f32], g: &[f32]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

fn sgd_step(p: &mut [f32], g: &[f32], scale: f32) {
    for (w, v) in p.iter_mut().zip(g) {
        *w -= scale * v;
    }
}

/// Initialize a target model from a trained source model. Every layer is copied;
/// the output layer is re-initialized (seeded He-uniform) when the class counts differ.
pub fn fine_tune_init(source: &TensorModel, target_class_count: usize, seed: u64) -> Result<TensorModel> {
    let last = source.layers().len() - 1;
    let LayerSpec::Dense { in_features, .. } = source.layers()[last].spec else {
        return Err(Error::Architecture("source model does not end in a dense layer".into()));
    };
    let mut layers = source.layers().to_vec();
    if target_class_count != source.class_count() {
        let spec = LayerSpec::dense(in_features, target_class_count);
        let bound = (6.0 / in_features as f64).sqrt() as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..target_class_count * in_features)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        layers[last] = crate::nn::Layer {
            spec,
            params: Some(Params {
                weight: Tensor::new(vec![target_class_count, in_features], weights)?,
                bias: Tensor::zeros(vec![target_class_count]),
            }),
        };
    }
    let mut meta = source.meta.clone();
    meta.name = format!("{}-finetuned", source.meta.name);
    meta.domain = Domain::Target;
    meta.history.clear();
    TensorModel::from_parts(meta, source.input_shape().to_vec(), target_class_count, layers)
}
