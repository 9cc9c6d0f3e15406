//! Source/target neuron similarity over shared target instances, inherited
//! important weights, and the four-region summaries of a layer pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{LayerPair, NeuronRanking, WeightImportance};
use crate::attribution::AttributionMatrix;
use crate::error::{Error, Result};
use crate::stats::{box_stats, histogram, BoxStats, Histogram, HISTOGRAM_BINS};

pub const TOP_SIMILAR: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub similarity: f64,
}

/// `values[j * cols + j']` = cosine of source row `j` and target row `j'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub class_id: usize,
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Most similar target neuron of each source neuron.
    pub source_partner: Vec<usize>,
    /// Most similar source neuron of each target neuron.
    pub target_partner: Vec<usize>,
    pub source_top: Vec<Vec<Neighbor>>,
    pub target_top: Vec<Vec<Neighbor>>,
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Ids by descending similarity, ties to the lower id.
fn ranked(values: impl Iterator<Item = f64>) -> Vec<Neighbor> {
    let mut v: Vec<Neighbor> = values.enumerate().map(|(id, similarity)| Neighbor { id, similarity }).collect();
    v.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
    v
}

impl SimilarityMatrix {
    pub fn get(&self, source: usize, target: usize) -> f64 {
        self.values[source * self.cols + target]
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let mut values = vec![0.0; self.values.len()];
        for j in 0..self.rows {
            for k in 0..self.cols {
                values[k * self.rows + j] = self.get(j, k);
            }
        }
        SimilarityMatrix {
            class_id: self.class_id,
            layer: self.layer,
            rows: self.cols,
            cols: self.rows,
            values,
            source_partner: self.target_partner.clone(),
            target_partner: self.source_partner.clone(),
            source_top: self.target_top.clone(),
            target_top: self.source_top.clone(),
        }
    }
}

pub fn neuron_similarity(src: &AttributionMatrix, tgt: &AttributionMatrix) -> Result<SimilarityMatrix> {
    if src.cols != tgt.cols || src.instance_ids != tgt.instance_ids {
        return Err(Error::ShapeMismatch {
            expected: vec![src.rows, src.cols],
            actual: vec![tgt.rows, tgt.cols],
        });
    }
    if src.layer != tgt.layer || src.class_id != tgt.class_id {
        return Err(Error::precondition("attribution matrices describe different layers or classes"));
    }
    let (rows, cols) = (src.rows, tgt.rows);
    let values: Vec<f64> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|j| (0..cols).map(move |k| cosine(src.row(j), tgt.row(k))))
        .collect();
    let source_ranked: Vec<Vec<Neighbor>> = (0..rows)
        .map(|j| ranked((0..cols).map(|k| values[j * cols + k])))
        .collect();
    let target_ranked: Vec<Vec<Neighbor>> = (0..cols)
        .map(|k| ranked((0..rows).map(|j| values[j * cols + k])))
        .collect();
    let partner = |r: &[Vec<Neighbor>]| r.iter().map(|v| v[0].id).collect();
    let top = |r: Vec<Vec<Neighbor>>| {
        r.into_iter()
            .map(|mut v| {
                v.truncate(TOP_SIMILAR);
                v
            })
            .collect()
    };
    Ok(SimilarityMatrix {
        class_id: src.class_id,
        layer: src.layer,
        rows,
        cols,
        source_partner: partner(&source_ranked),
        target_partner: partner(&target_ranked),
        source_top: top(source_ranked),
        target_top: top(target_ranked),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceEntry {
    pub from: usize,
    pub to: usize,
    pub source_from: usize,
    pub source_to: usize,
    pub inherited: bool,
    pub count: u32,
    pub strength: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCorrespondence {
    pub class_id: usize,
    pub pair: LayerPair,
    pub entries: Vec<CorrespondenceEntry>,
    pub inherited: usize,
}

impl WeightCorrespondence {
    pub fn inherited_fraction(&self) -> Option<f64> {
        (!self.entries.is_empty()).then(|| self.inherited as f64 / self.entries.len() as f64)
    }

    pub fn is_inherited(&self, from: usize, to: usize) -> Option<bool> {
        self.entries
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.inherited)
    }
}

/// Map both endpoints of every important target weight to their most similar
/// source neurons and check whether that source weight is important too.
pub fn weight_correspondence(
    tgt_imp: &WeightImportance,
    src_imp: &WeightImportance,
    s_from: &SimilarityMatrix,
    s_to: &SimilarityMatrix,
) -> Result<WeightCorrespondence> {
    if tgt_imp.pair != src_imp.pair || tgt_imp.class_id != src_imp.class_id {
        return Err(Error::precondition("importance sets describe different layer pairs or classes"));
    }
    if s_from.cols != tgt_imp.n_from || s_to.cols != tgt_imp.n_to || s_from.rows != src_imp.n_from || s_to.rows != src_imp.n_to {
        return Err(Error::precondition("similarity matrices do not cover the layer pair"));
    }
    let entries: Vec<CorrespondenceEntry> = tgt_imp
        .important
        .iter()
        .map(|w| {
            let source_from = s_from.target_partner[w.from];
            let source_to = s_to.target_partner[w.to];
            CorrespondenceEntry {
                from: w.from,
                to: w.to,
                source_from,
                source_to,
                inherited: src_imp.contains(source_from, source_to),
                count: w.count,
                strength: w.strength,
            }
        })
        .collect();
    Ok(WeightCorrespondence {
        class_id: tgt_imp.class_id,
        pair: tgt_imp.pair,
        inherited: entries.iter().filter(|e| e.inherited).count(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub from: usize,
    pub to: usize,
    pub value: f64,
    pub important: bool,
    pub inherited: Option<bool>,
}

/// Weights between one important neuron and the non-important neurons of the other layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronGroup {
    pub neuron: usize,
    pub cells: usize,
    pub boxplot: Option<BoxStats>,
    pub important_weights: usize,
    pub inherited_weights: usize,
    /// Inherited share of the group's important weights; `None` when it has
    /// none or no correspondence was given.
    pub pie_fraction: Option<f64>,
}

/// Four-region split of a layer pair ordered by importance:
/// 1 important x important, 2 important rows x rest, 3 rest x important columns, 4 rest x rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub pair: LayerPair,
    pub important_from: Vec<usize>,
    pub important_to: Vec<usize>,
    pub region1: Vec<Cell>,
    pub region2: Vec<NeuronGroup>,
    pub region3: Vec<NeuronGroup>,
    pub region4: Option<Histogram>,
    pub region4_cells: usize,
}

impl RegionSummary {
    pub fn cell_total(&self) -> usize {
        self.region1.len()
            + self.region2.iter().map(|g| g.cells).sum::<usize>()
            + self.region3.iter().map(|g| g.cells).sum::<usize>()
            + self.region4_cells
    }
}

/// Region data over the mean activated strengths of one model's weights.
/// `correspondence` adds inherited flags (target model only).
pub fn region_summaries(
    imp: &WeightImportance,
    from_rank: &NeuronRanking,
    to_rank: &NeuronRanking,
    correspondence: Option<&WeightCorrespondence>,
) -> Result<RegionSummary> {
    let (n_from, n_to) = (imp.n_from, imp.n_to);
    if from_rank.aggregated_rank.len() != n_from || to_rank.aggregated_rank.len() != n_to {
        return Err(Error::precondition("rankings do not match the layer pair"));
    }
    let value = |p: usize, q: usize| f64::from(imp.mean_strength[p * n_to + q]);
    let inherited = |p: usize, q: usize| correspondence.and_then(|c| c.is_inherited(p, q));
    let imp_from = &from_rank.important;
    let imp_to = &to_rank.important;
    let rest_from: Vec<usize> = (0..n_from).filter(|p| !imp_from.contains(p)).collect();
    let rest_to: Vec<usize> = (0..n_to).filter(|q| !imp_to.contains(q)).collect();

    let region1 = imp_from
        .iter()
        .flat_map(|&p| {
            imp_to.iter().map(move |&q| Cell {
                from: p,
                to: q,
                value: value(p, q),
                important: imp.contains(p, q),
                inherited: inherited(p, q),
            })
        })
        .collect();

    let group = |neuron: usize, cells: Vec<(usize, usize)>| {
        let values: Vec<f64> = cells.iter().map(|&(p, q)| value(p, q)).collect();
        let important: Vec<(usize, usize)> = cells.iter().copied().filter(|&(p, q)| imp.contains(p, q)).collect();
        let inherited_weights = important.iter().filter(|&&(p, q)| inherited(p, q) == Some(true)).count();
        NeuronGroup {
            neuron,
            cells: cells.len(),
            boxplot: box_stats(&values),
            important_weights: important.len(),
            inherited_weights,
            pie_fraction: (correspondence.is_some() && !important.is_empty())
                .then(|| inherited_weights as f64 / important.len() as f64),
        }
    };
    let region2 = imp_from
        .iter()
        .map(|&p| group(p, rest_to.iter().map(|&q| (p, q)).collect()))
        .collect();
    let region3 = imp_to
        .iter()
        .map(|&q| group(q, rest_from.iter().map(|&p| (p, q)).collect()))
        .collect();
    let rest: Vec<f64> = rest_from
        .iter()
        .flat_map(|&p| rest_to.iter().map(move |&q| value(p, q)))
        .collect();
    Ok(RegionSummary {
        pair: imp.pair,
        important_from: imp_from.clone(),
        important_to: imp_to.clone(),
        region1,
        region2,
        region3,
        region4: histogram(&rest, HISTOGRAM_BINS),
        region4_cells: rest.len(),
    })
}

/// Similarity matrix split by the important neurons of each model; the
/// important block is kept raw, the rest is summarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRegions {
    pub important_source: Vec<usize>,
    pub important_target: Vec<usize>,
    pub block: Vec<Vec<f64>>,
    pub source_rest: Vec<Option<Histogram>>,
    pub target_rest: Vec<Option<Histogram>>,
    pub rest: Option<Histogram>,
}

pub fn similarity_regions(s: &SimilarityMatrix, src_rank: &NeuronRanking, tgt_rank: &NeuronRanking) -> SimilarityRegions {
    let is = &src_rank.important;
    let it = &tgt_rank.important;
    let rest_s: Vec<usize> = (0..s.rows).filter(|j| !is.contains(j)).collect();
    let rest_t: Vec<usize> = (0..s.cols).filter(|k| !it.contains(k)).collect();
    let hist = |v: Vec<f64>| histogram(&v, HISTOGRAM_BINS);
    SimilarityRegions {
        block: is.iter().map(|&j| it.iter().map(|&k| s.get(j, k)).collect()).collect(),
        source_rest: is.iter().map(|&j| hist(rest_t.iter().map(|&k| s.get(j, k)).collect())).collect(),
        target_rest: it.iter().map(|&k| hist(rest_s.iter().map(|&j| s.get(j, k)).collect())).collect(),
        rest: hist(rest_s.iter().flat_map(|&j| rest_t.iter().map(move |&k| s.get(j, k))).collect()),
        important_source: is.clone(),
        important_target: it.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{ImportantWeight, SpatialReduction};
    use crate::nn::Domain;

    fn matrix(rows: Vec<Vec<f32>>, model: Domain) -> AttributionMatrix {
        let cols = rows[0].len();
        let columns: Vec<Vec<f32>> = (0..cols).map(|p| rows.iter().map(|r| r[p]).collect()).collect();
        AttributionMatrix::from_columns(0, 0, model, 1, &columns, (0..cols).collect()).unwrap()
    }

    #[test]
    fn identical_matrices_give_identity_partners() {
        let rows = vec![vec![1.0, 2.0, 0.5], vec![-1.0, 0.3, 2.0], vec![0.0, 0.0, 0.0]];
        let s = neuron_similarity(&matrix(rows.clone(), Domain::Source), &matrix(rows, Domain::Target)).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(1, 1), 1.0);
        assert_eq!(s.get(2, 2), 0.0);
        assert_eq!(&s.target_partner[..2], &[0, 1]);
    }

    #[test]
    fn antipodal_rows() {
        assert_eq!(cosine(&[1.0, -2.0, 3.0], &[-1.0, 2.0, -3.0]), -1.0);
    }

    #[test]
    fn column_mismatch_rejected() {
        let a = matrix(vec![vec![1.0, 2.0]], Domain::Source);
        let b = matrix(vec![vec![1.0, 2.0, 3.0]], Domain::Target);
        assert!(neuron_similarity(&a, &b).is_err());
    }

    fn importance(n_from: usize, n_to: usize, important: &[(usize, usize)], model: Domain) -> WeightImportance {
        WeightImportance {
            class_id: 0,
            pair: LayerPair { from: 0, to: 2 },
            model,
            n_from,
            n_to,
            instances: 1,
            k_row: important.len().max(1),
            k_w: important.len().max(1),
            reduction: SpatialReduction::Max,
            counts: vec![0; n_from * n_to],
            mean_strength: (0..n_from * n_to).map(|i| i as f32).collect(),
            important: important
                .iter()
                .map(|&(from, to)| ImportantWeight { from, to, count: 1, strength: 1.0 })
                .collect(),
        }
    }

    fn ranking(n: usize, important: Vec<usize>) -> NeuronRanking {
        NeuronRanking {
            class_id: 0,
            layer: 0,
            model: Domain::Target,
            aggregated_rank: vec![0.0; n],
            k: important.len(),
            important,
        }
    }

    #[test]
    fn correspondence_follows_permutation() {
        // source neuron j behaves like target neuron perm[j]
        let perm = [2usize, 0, 1];
        let tgt_rows = vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 2.0], vec![0.0, 0.0, 1.0, 3.0]];
        let src_rows: Vec<Vec<f32>> = (0..3).map(|j| tgt_rows[perm[j]].clone()).collect();
        let s = neuron_similarity(&matrix(src_rows, Domain::Source), &matrix(tgt_rows, Domain::Target)).unwrap();
        for j in 0..3 {
            assert_eq!(s.target_partner[perm[j]], j);
        }
        let tgt = importance(3, 3, &[(0, 1)], Domain::Target);
        let src = importance(3, 3, &[(1, 2)], Domain::Source);
        let c = weight_correspondence(&tgt, &src, &s, &s).unwrap();
        assert_eq!((c.entries[0].source_from, c.entries[0].source_to), (1, 2));
        assert!(c.entries[0].inherited);
        let empty = importance(3, 3, &[], Domain::Source);
        let c = weight_correspondence(&tgt, &empty, &s, &s).unwrap();
        assert_eq!(c.inherited, 0);
        assert_eq!(c.inherited_fraction(), Some(0.0));
    }

    #[test]
    fn all_important_leaves_only_region_one() {
        let imp = importance(2, 3, &[(0, 0)], Domain::Target);
        let r = region_summaries(&imp, &ranking(2, vec![0, 1]), &ranking(3, vec![0, 1, 2]), None).unwrap();
        assert_eq!(r.region1.len(), 6);
        assert!(r.region2.iter().all(|g| g.cells == 0));
        assert!(r.region3.iter().all(|g| g.cells == 0));
        assert_eq!(r.region4_cells, 0);
        assert!(r.region4.is_none());
    }

    #[test]
    fn region_partition_is_exact() {
        let imp = importance(4, 5, &[(0, 1), (3, 4)], Domain::Target);
        let r = region_summaries(&imp, &ranking(4, vec![3]), &ranking(5, vec![1]), None).unwrap();
        assert_eq!(r.cell_total(), 20);
        assert_eq!(r.region1.len(), 1);
        assert_eq!(r.region2[0].cells, 4);
        assert_eq!(r.region3[0].cells, 3);
        assert_eq!(r.region4_cells, 12);
        // (3, 4) sits in region 2 of neuron 3
        assert_eq!(r.region2[0].important_weights, 1);
    }
}
