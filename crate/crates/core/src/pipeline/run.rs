use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::artifact::*;
use super::config::{DataConfig, RunConfig, SplitCounts, TargetTransform, TrainingConfig};
use crate::abstraction::{
    default_k_row, default_k_w, extract_important_neurons, extract_important_weights, layer_pairs, NeuronRanking,
    WeightImportance,
};
use crate::attribution::{build_attribution_matrices, extract_embeddings, AttributionMatrix};
use crate::comparison::{
    neuron_similarity, region_summaries, similarity_regions, weight_correspondence, RegionSummary, SimilarityMatrix,
    SimilarityRegions, WeightCorrespondence,
};
use crate::data::{read_idx, synthetic, thumbnail_png, LabeledDataset, Split, SyntheticSpec};
use crate::discriminability::{
    biplot_projection, build_domain_table, rank_features, select_neurons, train_domain_svm, DiscriminabilityResult,
    DomainAttributionTable, FeatureEntry,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion_table, evaluate_accuracy, series_from_history, transferability};
use crate::nn::{fine_tune_init, train, Domain, EvalSets, LayerSpec, TensorModel};
use crate::projection::{project_points, PointMeta, ProjectionResult};
use crate::stats::{box_stats, histogram, HISTOGRAM_BINS};

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub source_train: LabeledDataset,
    pub source_val: LabeledDataset,
    pub target_train: LabeledDataset,
    pub target_val: LabeledDataset,
}

fn to_target(d: LabeledDataset, transform: TargetTransform, split: Split) -> Result<LabeledDataset> {
    let d = match transform {
        TargetTransform::Rotate90 => d.rotate90()?,
        TargetTransform::Identity | TargetTransform::Same => d,
    };
    Ok(d.with_tags(Domain::Target, split))
}

fn split_sets(
    make: impl Fn(usize, usize, Domain, Split) -> Result<LabeledDataset>,
    c: &SplitCounts,
    transform: TargetTransform,
) -> Result<Datasets> {
    let source_train = make(0, c.source_train, Domain::Source, Split::Train)?;
    let source_val = make(c.source_train, c.source_val, Domain::Source, Split::Val)?;
    if transform == TargetTransform::Same {
        return Ok(Datasets {
            target_train: source_train.clone().with_tags(Domain::Target, Split::Train),
            target_val: source_val.clone().with_tags(Domain::Target, Split::Val),
            source_train,
            source_val,
        });
    }
    let base = c.source_train + c.source_val;
    let target_train = make(base, c.target_train, Domain::Target, Split::Train)?;
    let target_val = make(base + c.target_train, c.target_val, Domain::Target, Split::Val)?;
    Ok(Datasets {
        target_train: to_target(target_train, transform, Split::Train)?,
        target_val: to_target(target_val, transform, Split::Val)?,
        source_train,
        source_val,
    })
}

pub fn load_datasets(cfg: &DataConfig) -> Result<Datasets> {
    match cfg {
        DataConfig::Idx {
            images,
            labels,
            classes,
            per_class,
            transform,
        } => {
            let idx = read_idx(images, labels)?;
            split_sets(|offset, count, domain, split| idx.select(classes, offset, count, domain, split), per_class, *transform)
        }
        DataConfig::Synthetic {
            classes,
            side,
            noise,
            prototype_seed,
            per_class,
            transform,
        } => {
            // one seed per split keeps the splits disjoint draws
            split_sets(
                |offset, count, domain, split| {
                    synthetic(
                        &SyntheticSpec {
                            classes: *classes,
                            per_class: count,
                            side: *side,
                            noise: *noise,
                            prototype_seed: *prototype_seed,
                            seed: prototype_seed.wrapping_add(1 + offset as u64),
                        },
                        domain,
                        split,
                    )
                },
                per_class,
                *transform,
            )
        }
        DataConfig::Tlns {
            source_train,
            source_val,
            target_train,
            target_val,
        } => Ok(Datasets {
            source_train: LabeledDataset::load(source_train)?.with_tags(Domain::Source, Split::Train),
            source_val: LabeledDataset::load(source_val)?.with_tags(Domain::Source, Split::Val),
            target_train: LabeledDataset::load(target_train)?.with_tags(Domain::Target, Split::Train),
            target_val: LabeledDataset::load(target_val)?.with_tags(Domain::Target, Split::Val),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub source: TensorModel,
    pub target: TensorModel,
    pub scratch: Option<TensorModel>,
}

/// Train the source model, then the target model initialized from it, and
/// optionally a from-scratch target model with the same budget.
pub fn train_models(cfg: &TrainingConfig, data: &Datasets) -> Result<TrainedModels> {
    let classes = data.source_train.class_count();
    if data.target_train.class_count() != classes || data.target_val.class_count() != classes {
        return Err(Error::precondition("source and target must share the class set"));
    }
    let eval = EvalSets {
        source_train: Some(&data.source_train),
        target_train: Some(&data.target_train),
        own_val: Some(&data.source_val),
        target_val: Some(&data.target_val),
    };
    let input_shape = data.source_train.instance_shape().to_vec();
    let init = stage(
        "init",
        TensorModel::with_architecture("source", Domain::Source, &cfg.architecture, input_shape.clone(), classes, cfg.source.seed),
    )?;
    let (source, _) = stage("train-source", train(&init, &data.source_train, &cfg.source, &eval))?;
    let target_eval = EvalSets {
        own_val: Some(&data.target_val),
        ..eval
    };
    let target = if cfg.target.epochs == 0 {
        let mut t = source.clone();
        t.meta.name = "target".into();
        t.meta.domain = Domain::Target;
        t
    } else {
        let mut init = stage("fine-tune", fine_tune_init(&source, classes, cfg.target.seed))?;
        init.meta.name = "target".into();
        stage("train-target", train(&init, &data.target_train, &cfg.target, &target_eval))?.0
    };
    let scratch = if cfg.scratch_baseline {
        let init = stage(
            "init",
            TensorModel::with_architecture("scratch", Domain::Target, &cfg.architecture, input_shape, classes, cfg.target.seed),
        )?;
        Some(stage("train-scratch", train(&init, &data.target_train, &cfg.target, &target_eval))?.0)
    } else {
        None
    };
    Ok(TrainedModels { source, target, scratch })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityFile {
    pub class_id: usize,
    pub layer: usize,
    pub matrix: SimilarityMatrix,
    pub regions: SimilarityRegions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub class_id: usize,
    pub pair: usize,
    pub target: WeightImportance,
    pub source: WeightImportance,
    pub correspondence: WeightCorrespondence,
    pub target_regions: RegionSummary,
    pub source_regions: RegionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminabilityFile {
    pub class_id: usize,
    pub table: DomainAttributionTable,
    pub result: DiscriminabilityResult,
    /// Descending by `|u|`.
    pub features: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstancesFile {
    pub projection: ProjectionResult,
    /// Base64 grayscale PNG per point, aligned with `projection.points`.
    pub thumbnails: Vec<String>,
}

/// Layers whose neurons are attributed: every parameterized layer but the output.
pub fn neuron_layers(model: &TensorModel) -> Vec<usize> {
    let mut layers = model.parameterized_layers();
    layers.pop();
    layers
}

fn layer_kind(model: &TensorModel, layer: usize) -> &'static str {
    match model.layers()[layer].spec {
        LayerSpec::Conv2d { .. } => "conv2d",
        _ => "dense",
    }
}

fn neuron_file(
    class_id: usize,
    ordinal: usize,
    model: Domain,
    matrix: &AttributionMatrix,
    ranking: &NeuronRanking,
    sim: &SimilarityMatrix,
) -> NeuronFile {
    let order = ranking.order();
    let neurons = (0..matrix.rows)
        .map(|j| {
            let values: Vec<f64> = matrix.row(j).iter().map(|&v| f64::from(v)).collect();
            let (partner, similar) = match model {
                Domain::Source => (sim.source_partner[j], sim.source_top[j].clone()),
                Domain::Target => (sim.target_partner[j], sim.target_top[j].clone()),
            };
            NeuronDetail {
                id: j,
                aggregated_rank: ranking.aggregated_rank[j],
                position: order.iter().position(|&n| n == j).expect("permutation") + 1,
                important: ranking.is_important(j),
                partner,
                similar,
                attribution: histogram(&values, HISTOGRAM_BINS),
                attribution_box: box_stats(&values),
            }
        })
        .collect();
    NeuronFile {
        class_id,
        layer: ordinal,
        model,
        neurons,
    }
}

/// Every class subset of size one or two.
fn projection_sets(classes: &[usize]) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = classes.iter().map(|&c| vec![c]).collect();
    for (i, &a) in classes.iter().enumerate() {
        for &b in &classes[i + 1..] {
            sets.push(vec![a, b]);
        }
    }
    sets
}

fn projection(
    cfg: &RunConfig,
    data: &Datasets,
    target: &TensorModel,
    classes: &[usize],
) -> Result<Option<InstancesFile>> {
    let per = cfg.analysis.projection_instances;
    let mut vectors = Vec::new();
    let mut meta = Vec::new();
    let mut thumbnails = Vec::new();
    let mut dim = 0;
    for (domain, set) in [(Domain::Source, &data.source_val), (Domain::Target, &data.target_val)] {
        for &c in classes {
            let idx: Vec<usize> = set.class_indices(c).into_iter().take(per).collect();
            if idx.is_empty() {
                continue;
            }
            let sub = set.subset(&idx)?;
            let emb = extract_embeddings(target, &sub)?;
            let predicted = target.predict(sub.instances())?;
            dim = emb.dim;
            vectors.extend_from_slice(&emb.vectors);
            for (i, &id) in sub.ids().iter().enumerate() {
                meta.push(PointMeta {
                    id,
                    domain,
                    label: c,
                    prediction: predicted[i],
                });
                let png = thumbnail_png(sub.instance(i), sub.instance_shape())?;
                thumbnails.push(base64::engine::general_purpose::STANDARD.encode(png));
            }
        }
    }
    if meta.len() < 10 {
        return Ok(None);
    }
    let projection = project_points(classes.to_vec(), &vectors, dim, &meta, &cfg.analysis.tsne)?;
    Ok(Some(InstancesFile { projection, thumbnails }))
}

/// Everything a run publishes, computed in memory.
pub fn build_artifact(cfg: &RunConfig) -> Result<(String, ArtifactFiles, Summary)> {
    cfg.validate()?;
    let run_id = cfg.run_id()?;
    let data = stage("load-data", load_datasets(&cfg.data))?;
    let models = train_models(&cfg.training, &data)?;
    let (files, summary) = analyze(cfg, &run_id, &data, &models)?;
    Ok((run_id, files, summary))
}

/// Build the artifact and publish it atomically under `root/<run id>`.
pub fn run_pipeline(cfg: &RunConfig, root: &Path) -> Result<(String, PathBuf, Summary)> {
    let (run_id, files, summary) = build_artifact(cfg)?;
    let dir = stage("write", files.write_atomic(root, &run_id))?;
    Ok((run_id, dir, summary))
}

pub fn analyze(cfg: &RunConfig, run_id: &str, data: &Datasets, models: &TrainedModels) -> Result<(ArtifactFiles, Summary)> {
    let (source, target) = (&models.source, &models.target);
    let mut files = ArtifactFiles::default();
    stage("write", files.insert_json(CONFIG, cfg))?;
    stage("write", models.source.to_bytes().map(|b| files.insert_bytes(model_path(Domain::Source), b)))?;
    stage("write", models.target.to_bytes().map(|b| files.insert_bytes(model_path(Domain::Target), b)))?;

    let summary = stage("metrics", summarize(run_id, data, models))?;
    stage("metrics", files.insert_json(SUMMARY, &summary))?;
    files.insert_bytes("confusion.csv", stage("metrics", summary.confusion.to_csv())?.into_bytes());

    let class_count = data.target_train.class_count();
    let classes: Vec<usize> = match &cfg.analysis.classes {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&c| c >= class_count) {
                return Err(Error::Config(format!("analysis class {bad} out of range ({class_count} classes)")));
            }
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => (0..class_count).collect(),
    };

    let mut projections = Vec::new();
    for set in projection_sets(&classes) {
        if let Some(file) = stage("projection", projection(cfg, data, target, &set))? {
            files.insert_json(instances_path(&set), &file)?;
            projections.push(set);
        }
    }

    let layers = neuron_layers(target);
    let pairs = layer_pairs(&layers);
    let a = &cfg.analysis;
    let pair_infos: Vec<PairInfo> = pairs
        .iter()
        .enumerate()
        .map(|(ordinal, &p)| {
            let k_row = a.k_row.unwrap_or_else(|| default_k_row(target.neuron_count(p.from), target.neuron_count(p.to)));
            PairInfo {
                ordinal,
                from: ordinal,
                to: ordinal + 1,
                layers: p,
                k_row,
                k_w: a.k_w.unwrap_or_else(|| default_k_w(k_row)),
            }
        })
        .collect();

    let mut index = Vec::new();
    for &c in &classes {
        let sample = stage("attribution", data.target_train.class_sample(c, Some(a.instances)))?;
        let mut mats: BTreeMap<Domain, Vec<AttributionMatrix>> = BTreeMap::new();
        let mut ranks: BTreeMap<Domain, Vec<NeuronRanking>> = BTreeMap::new();
        for model in [source, target] {
            let m = stage("attribution", build_attribution_matrices(model, &sample, c, &layers, a.steps))?;
            let r = stage("abstraction", m.iter().map(extract_important_neurons).collect::<Result<Vec<_>>>())?;
            mats.insert(model.meta.domain, m);
            ranks.insert(model.meta.domain, r);
        }
        let (sm, tm) = (&mats[&Domain::Source], &mats[&Domain::Target]);
        let (sr, tr) = (&ranks[&Domain::Source], &ranks[&Domain::Target]);
        let mut sims = Vec::new();
        for (ord, _) in layers.iter().enumerate() {
            let sim = stage("comparison", neuron_similarity(&sm[ord], &tm[ord]))?;
            let regions = similarity_regions(&sim, &sr[ord], &tr[ord]);
            files.insert_json(
                similarity_path(c, ord),
                &SimilarityFile {
                    class_id: c,
                    layer: ord,
                    matrix: sim.clone(),
                    regions,
                },
            )?;
            for (domain, m, r) in [(Domain::Source, &sm[ord], &sr[ord]), (Domain::Target, &tm[ord], &tr[ord])] {
                files.insert_bytes(attribution_path(c, ord, domain), stage("write", m.to_bytes())?);
                files.insert_json(rankings_path(c, ord, domain), r)?;
                files.insert_json(neurons_path(c, ord, domain), &neuron_file(c, ord, domain, m, r, &sim))?;
            }
            sims.push(sim);
        }
        for info in &pair_infos {
            let imp = |model: &TensorModel| {
                stage(
                    "abstraction",
                    extract_important_weights(model, &sample, c, info.layers, Some(info.k_row), Some(info.k_w), a.reduction),
                )
            };
            let (src_imp, tgt_imp) = (imp(source)?, imp(target)?);
            let corr = stage("comparison", weight_correspondence(&tgt_imp, &src_imp, &sims[info.from], &sims[info.to]))?;
            let target_regions = stage("comparison", region_summaries(&tgt_imp, &tr[info.from], &tr[info.to], Some(&corr)))?;
            let source_regions = stage("comparison", region_summaries(&src_imp, &sr[info.from], &sr[info.to], None))?;
            files.insert_json(
                weights_path(c, info.ordinal),
                &WeightsFile {
                    class_id: c,
                    pair: info.ordinal,
                    target: tgt_imp,
                    source: src_imp,
                    correspondence: corr,
                    target_regions,
                    source_regions,
                },
            )?;
        }
        let d = &a.discriminability;
        let neurons = select_neurons(tr, d.max_features);
        let src_set = stage("discriminability", data.source_val.class_sample(c, Some(d.instances)))?;
        let tgt_set = stage("discriminability", data.target_train.class_sample(c, Some(d.instances)))?;
        let table = stage("discriminability", build_domain_table(target, &neurons, c, &src_set, &tgt_set, a.steps))?;
        let fit = stage("discriminability", train_domain_svm(&table, d.seed))?;
        let result = stage("discriminability", biplot_projection(&table, &fit, d.seed))?;
        let features = rank_features(&table, &result, true);
        files.insert_json(
            discriminability_path(c),
            &DiscriminabilityFile {
                class_id: c,
                table,
                result,
                features,
            },
        )?;
        index.push(ClassIndex {
            class: c,
            layers: (0..layers.len()).collect(),
            pairs: (0..pair_infos.len()).collect(),
            discriminability: true,
        });
    }

    let notes = [
        ("baseline", a.baseline.clone()),
        ("steps", a.steps.to_string()),
        ("attribution_target", "pre-softmax logit".to_string()),
        ("important_neurons", "ceil(0.1 * N) by aggregated fractional rank".to_string()),
        ("weight_reduction", format!("{:?}", a.reduction).to_lowercase()),
        ("weight_value", "mean activated strength over the class instances".to_string()),
        ("similarity", "cosine similarity, signed ordering in top lists".to_string()),
        ("discriminability_model", "target".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = Manifest {
        run_id: run_id.to_string(),
        version: 1,
        classes: data
            .target_train
            .class_names()
            .iter()
            .enumerate()
            .map(|(id, name)| ClassInfo { id, name: name.clone() })
            .collect(),
        neuron_layers: layers
            .iter()
            .enumerate()
            .map(|(ordinal, &l)| NeuronLayerInfo {
                ordinal,
                layer: l,
                kind: layer_kind(target, l).to_string(),
                neurons: target.neuron_count(l),
            })
            .collect(),
        pairs: pair_infos,
        index,
        projections,
        notes,
    };
    files.insert_json(MANIFEST, &manifest)?;
    Ok((files, summary))
}

fn summarize(run_id: &str, data: &Datasets, models: &TrainedModels) -> Result<Summary> {
    let series_of = |domain: Domain, m: &TensorModel| series_from_history(domain, &m.meta.history);
    let target_val_series = |m: &TensorModel| -> Vec<f64> { m.meta.history.iter().filter_map(|r| r.target_val).collect() };
    let mut series = series_of(Domain::Source, &models.source);
    series.extend(series_of(Domain::Target, &models.target));
    let transferability = transferability(&target_val_series(&models.source), &target_val_series(&models.target))?;
    let confusion = confusion_table(&models.source, &models.target, &data.target_val)?;
    Ok(Summary {
        run_id: run_id.to_string(),
        series,
        scratch_series: models.scratch.as_ref().map(|m| series_of(Domain::Target, m)).unwrap_or_default(),
        transferability,
        overall_accuracy: confusion.overall_accuracy(),
        confusion,
        final_accuracy: FinalAccuracy {
            source_on_target_val: evaluate_accuracy(&models.source, &data.target_val)?,
            target_on_target_val: evaluate_accuracy(&models.target, &data.target_val)?,
            scratch_on_target_val: models
                .scratch
                .as_ref()
                .map(|m| evaluate_accuracy(m, &data.target_val))
                .transpose()?,
        },
    })
}
