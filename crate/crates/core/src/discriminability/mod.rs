//! Domain discriminability: a linear SVM separating source from target
//! instances by the attributions of selected neurons, and the biplot that
//! projects the attribution table onto `[u / |u|, g]` (`g` = first principal component).

mod pca;
mod svm;

pub use pca::{column_means, covariance, first_principal_component, fix_sign, leading_eigenvector, POWER_TOLERANCE};
pub use svm::{fit, stratified_folds, train_svm, LinearSvm, SvmFit, CV_FOLDS, C_GRID};

use serde::{Deserialize, Serialize};

use crate::abstraction::NeuronRanking;
use crate::attribution::neuron_attributions;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::TensorModel;
use crate::stats::{histogram_in, range, Histogram, HISTOGRAM_BINS};

pub const MAX_FEATURES: usize = 64;
pub const DEFAULT_ACTIVE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronRef {
    pub layer: usize,
    pub id: usize,
}

/// Union of the important neurons of every layer. Above `cap`, neurons with the
/// highest mean normalized rank win (ties: lower layer, then lower id).
/// Returned in `(layer, id)` order.
pub fn select_neurons(rankings: &[NeuronRanking], cap: usize) -> Vec<NeuronRef> {
    let mut pool: Vec<(f64, NeuronRef)> = rankings
        .iter()
        .flat_map(|r| {
            let n = r.aggregated_rank.len() as f64;
            let total: f64 = r.aggregated_rank.iter().sum();
            r.important.iter().map(move |&id| {
                let priority = if total > 0.0 { r.aggregated_rank[id] * (n + 1.0) / (2.0 * total) } else { 0.0 };
                (priority, NeuronRef { layer: r.layer, id })
            })
        })
        .collect();
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    pool.dedup_by(|a, b| a.1 == b.1);
    pool.truncate(cap);
    let mut out: Vec<NeuronRef> = pool.into_iter().map(|p| p.1).collect();
    out.sort();
    out
}

/// Rows are instances (all source rows first, label 0; then target rows, label 1),
/// columns the selected neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAttributionTable {
    pub class_id: usize,
    pub neurons: Vec<NeuronRef>,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    pub instance_ids: Vec<usize>,
}

impl DomainAttributionTable {
    pub fn new(class_id: usize, neurons: Vec<NeuronRef>, values: Vec<f64>, labels: Vec<u8>, instance_ids: Vec<usize>) -> Result<Self> {
        let (rows, cols) = (labels.len(), neurons.len());
        if cols == 0 {
            return Err(Error::precondition("no neurons selected"));
        }
        if values.len() != rows * cols || instance_ids.len() != rows {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![values.len()],
            });
        }
        if labels.windows(2).any(|w| w[0] > w[1]) || labels.iter().any(|&l| l > 1) {
            return Err(Error::precondition("labels must be 0 rows followed by 1 rows"));
        }
        Ok(Self {
            class_id,
            neurons,
            rows,
            cols,
            values,
            labels,
            instance_ids,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.values[r * self.cols + c]).collect()
    }
}

/// Layer Conductance (for logit `class_id`) of each selected neuron on every
/// instance of both datasets, evaluated in `model`.
pub fn build_domain_table(
    model: &TensorModel,
    neurons: &[NeuronRef],
    class_id: usize,
    source: &LabeledDataset,
    target: &LabeledDataset,
    steps: usize,
) -> Result<DomainAttributionTable> {
    if neurons.is_empty() {
        return Err(Error::precondition("no neurons selected"));
    }
    let mut layers: Vec<usize> = neurons.iter().map(|n| n.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (label, data) in [(0u8, source), (1, target)] {
        let per_layer = neuron_attributions(model, data, class_id, &layers, steps)?;
        for i in 0..data.len() {
            for n in neurons {
                let slot = layers.binary_search(&n.layer).expect("layer collected");
                values.push(f64::from(per_layer[slot][i][n.id]));
            }
            labels.push(label);
            ids.push(data.ids()[i]);
        }
    }
    DomainAttributionTable::new(class_id, neurons.to_vec(), values, labels, ids)
}

pub fn train_domain_svm(table: &DomainAttributionTable, seed: u64) -> Result<SvmFit> {
    train_svm(&table.values, table.rows, table.cols, &table.labels, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2d {
    pub columns: Vec<usize>,
    pub coordinates: Vec<[f64; 2]>,
    /// Per column: `(u_j / |u| * s, g_j * s)`, `s` the largest coordinate radius.
    pub axes: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminabilityResult {
    pub class_id: usize,
    pub neurons: Vec<NeuronRef>,
    pub u: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub cv_accuracy: f64,
    pub grid_accuracy: Vec<f64>,
    /// Column positions by descending `|u|` (ties: lower position).
    pub ranking: Vec<usize>,
    pub g: Vec<f64>,
    pub mean: Vec<f64>,
    /// Horizontal coordinate above which the SVM predicts the target domain.
    pub threshold: f64,
    pub projection: Projection2d,
    pub labels: Vec<u8>,
    pub instance_ids: Vec<usize>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project(table: &DomainAttributionTable, mean: &[f64], u: &[f64], g: &[f64], columns: &[usize]) -> Result<Projection2d> {
    let u_sel: Vec<f64> = columns.iter().map(|&j| u[j]).collect();
    let mut g_sel: Vec<f64> = columns.iter().map(|&j| g[j]).collect();
    let un = norm(&u_sel);
    if un == 0.0 {
        return Err(Error::precondition("SVM weight vector is zero on the selected neurons"));
    }
    let gn = norm(&g_sel);
    if gn > 0.0 {
        g_sel.iter_mut().for_each(|x| *x /= gn);
    }
    let coordinates: Vec<[f64; 2]> = (0..table.rows)
        .map(|r| {
            let row = table.row(r);
            columns.iter().enumerate().fold([0.0, 0.0], |[x, y], (k, &j)| {
                let d = row[j] - mean[j];
                [x + d * u_sel[k] / un, y + d * g_sel[k]]
            })
        })
        .collect();
    let s = coordinates.iter().map(|[x, y]| (x * x + y * y).sqrt()).fold(0.0, f64::max);
    let axes = (0..columns.len()).map(|k| [u_sel[k] / un * s, g_sel[k] * s]).collect();
    Ok(Projection2d {
        columns: columns.to_vec(),
        coordinates,
        axes,
    })
}

pub fn biplot_projection(table: &DomainAttributionTable, fit: &SvmFit, seed: u64) -> Result<DiscriminabilityResult> {
    let u = &fit.svm.u;
    if u.len() != table.cols {
        return Err(Error::precondition("SVM does not match the table"));
    }
    let un = norm(u);
    if un == 0.0 {
        return Err(Error::precondition("SVM weight vector is zero"));
    }
    let mean = column_means(&table.values, table.rows, table.cols);
    let g = first_principal_component(&table.values, table.rows, table.cols, seed)?;
    let all: Vec<usize> = (0..table.cols).collect();
    let projection = project(table, &mean, u, &g, &all)?;
    let mut ranking = all;
    ranking.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b)));
    let offset: f64 = u.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>() + fit.svm.bias;
    Ok(DiscriminabilityResult {
        class_id: table.class_id,
        neurons: table.neurons.clone(),
        u: u.clone(),
        bias: fit.svm.bias,
        c: fit.svm.c,
        cv_accuracy: fit.cv_accuracy,
        grid_accuracy: fit.grid_accuracy.clone(),
        ranking,
        g,
        threshold: -offset / un,
        mean,
        projection,
        labels: table.labels.clone(),
        instance_ids: table.instance_ids.clone(),
    })
}

/// Biplot recomputed over the `active` column positions only.
pub fn restricted_projection(table: &DomainAttributionTable, result: &DiscriminabilityResult, active: &[usize]) -> Result<Projection2d> {
    if active.is_empty() {
        return Err(Error::precondition("no active neurons"));
    }
    if let Some(&bad) = active.iter().find(|&&j| j >= table.cols) {
        return Err(Error::precondition(format!("neuron position {bad} out of range")));
    }
    project(table, &result.mean, &result.u, &result.g, active)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub position: usize,
    pub neuron: NeuronRef,
    pub u: f64,
    /// 1-based place by descending `|u|`.
    pub rank: usize,
    pub active: bool,
    pub source: Histogram,
    pub target: Histogram,
}

/// Neurons ordered by `|u|`; the top five by magnitude are active. Both
/// histograms of a neuron share one range so they can be drawn back to back.
pub fn rank_features(table: &DomainAttributionTable, result: &DiscriminabilityResult, descending: bool) -> Vec<FeatureEntry> {
    let mut order = result.ranking.clone();
    if !descending {
        order.reverse();
    }
    order
        .into_iter()
        .map(|j| {
            let rank = result.ranking.iter().position(|&r| r == j).expect("permutation") + 1;
            let col = table.column(j);
            let (lo, hi) = range(&col).unwrap_or((0.0, 0.0));
            let split = |label: u8| -> Vec<f64> { (0..table.rows).filter(|&r| table.labels[r] == label).map(|r| col[r]).collect() };
            FeatureEntry {
                position: j,
                neuron: table.neurons[j],
                u: result.u[j],
                rank,
                active: rank <= DEFAULT_ACTIVE,
                source: histogram_in(&split(0), lo, hi, HISTOGRAM_BINS),
                target: histogram_in(&split(1), lo, hi, HISTOGRAM_BINS),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Domain;

    fn separable() -> DomainAttributionTable {
        // feature 1 separates; feature 0 is noise-free but uninformative
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let label = u8::from(i >= 15);
            let x = if label == 0 { -1.0 - (i % 5) as f64 } else { 1.0 + (i % 5) as f64 };
            values.extend([((i * 7) % 11) as f64 * 0.1, x]);
            labels.push(label);
        }
        DomainAttributionTable::new(0, vec![NeuronRef { layer: 0, id: 0 }, NeuronRef { layer: 0, id: 1 }], values, labels, (0..30).collect()).unwrap()
    }

    #[test]
    fn separating_feature_ranks_first_and_projection_agrees() {
        let t = separable();
        let fit = train_domain_svm(&t, 0).unwrap();
        let r = biplot_projection(&t, &fit, 0).unwrap();
        assert!(r.cv_accuracy >= 0.95);
        assert_eq!(r.ranking[0], 1);
        for (row, xy) in r.projection.coordinates.iter().enumerate() {
            assert_eq!(u8::from(xy[0] > r.threshold), fit.svm.predict(t.row(row)));
        }
    }

    #[test]
    fn order_switch_reverses() {
        let t = separable();
        let fit = train_domain_svm(&t, 0).unwrap();
        let r = biplot_projection(&t, &fit, 0).unwrap();
        let d: Vec<usize> = rank_features(&t, &r, true).iter().map(|e| e.position).collect();
        let mut a: Vec<usize> = rank_features(&t, &r, false).iter().map(|e| e.position).collect();
        a.reverse();
        assert_eq!(d, a);
        for e in rank_features(&t, &r, true) {
            assert_eq!(e.source.total(), 15);
            assert_eq!(e.target.total(), 15);
            assert!(e.active);
        }
    }

    #[test]
    fn selection_caps_by_priority() {
        let r = |layer, ranks: Vec<f64>, important: Vec<usize>| NeuronRanking {
            class_id: 0,
            layer,
            model: Domain::Target,
            k: important.len(),
            aggregated_rank: ranks,
            important,
        };
        let rankings = [r(3, vec![1.0, 2.0, 3.0], vec![2, 1]), r(0, vec![4.0, 1.0], vec![0])];
        let all = select_neurons(&rankings, 64);
        assert_eq!(all.len(), 3);
        assert_eq!(all[0], NeuronRef { layer: 0, id: 0 });
        let capped = select_neurons(&rankings, 1);
        assert_eq!(capped, vec![NeuronRef { layer: 0, id: 0 }]);
    }

    #[test]
    fn empty_selection_rejected() {
        assert!(DomainAttributionTable::new(0, vec![], vec![], vec![], vec![]).is_err());
    }
}
