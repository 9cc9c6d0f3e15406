//! Property suites shared by the integration tests and the acceptance report.
//! Each suite measures, compares against a threshold and returns an [`Outcome`]
//! instead of panicking, so callers decide whether red is fatal.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tlens_core::abstraction::{
    extract_important_neurons, extract_important_weights, fractional_rank_columns, important_neuron_count,
    strengths_from_input, LayerPair, NeuronRanking, SpatialReduction,
};
use tlens_core::attribution::{conductance_layers, AttributionMatrix};
use tlens_core::data::{LabeledDataset, Split};
use tlens_core::discriminability::{biplot_projection, first_principal_component, train_domain_svm, DomainAttributionTable, NeuronRef};
use tlens_core::nn::{loss_gradients, Architecture, Domain, Layer, LayerSpec, Params, TensorModel};
use tlens_core::pipeline::artifact::{attribution_path, rankings_path, similarity_path, weights_path};
use tlens_core::pipeline::{build_artifact, Manifest, RunConfig, SimilarityFile, WeightsFile};
use tlens_core::projection::{input_affinities, squared_distances, tsne, TsneConfig};
use tlens_core::Tensor;

use super::reference::{
    brute_ranks, brute_strengths, brute_top_k, eigen_first_component, fd_layer_gradient, fd_param_gradients, Net64,
};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {:<40} {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn replace_params(model: TensorModel, mut f: impl FnMut(usize, &LayerSpec, &Params) -> Params) -> TensorModel {
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| Layer {
            spec: l.spec,
            params: l.params.as_ref().map(|p| f(i, &l.spec, p)),
        })
        .collect();
    TensorModel::from_parts(model.meta.clone(), model.input_shape().to_vec(), model.class_count(), layers).unwrap()
}

/// Small random CNN: one or two conv blocks (random kernel, padding, stride,
/// optional pooling), a hidden dense layer and a 2-4 class head. Biases are
/// nonzero so no unit sits exactly on a ReLU kink.
pub fn random_cnn(seed: u64) -> TensorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = vec![rng.random_range(1..=2), rng.random_range(5..=8), rng.random_range(5..=8)];
    let mut shape = input.clone();
    let mut specs = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let kernel = rng.random_range(1..=3usize).min(shape[1]).min(shape[2]);
        let padding = if kernel > 1 { rng.random_range(0..=1) } else { 0 };
        let stride = if rng.random_bool(0.25) { 2 } else { 1 };
        let spec = LayerSpec::Conv2d {
            in_channels: shape[0],
            out_channels: rng.random_range(2..=4),
            kernel,
            stride,
            padding,
        };
        shape = spec.output_shape(&shape).unwrap();
        specs.extend([spec, LayerSpec::Relu]);
        if shape[1] >= 4 && shape[2] >= 4 && rng.random_bool(0.5) {
            specs.push(LayerSpec::pool(2));
            shape = LayerSpec::pool(2).output_shape(&shape).unwrap();
        }
    }
    let features: usize = shape.iter().product();
    let hidden = rng.random_range(3..=6);
    let classes = rng.random_range(2..=4);
    specs.extend([
        LayerSpec::Flatten,
        LayerSpec::dense(features, hidden),
        LayerSpec::Relu,
        LayerSpec::dense(hidden, classes),
    ]);
    let model = TensorModel::new("probe", Domain::Source, input, specs, classes, seed).unwrap();
    replace_params(model, |_, _, p| Params {
        weight: p.weight.clone(),
        bias: Tensor::new(
            p.bias.shape().to_vec(),
            (0..p.bias.len()).map(|_| rng.random_range(-0.2..0.2)).collect(),
        )
        .unwrap(),
    })
}

fn uniform_input(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Analytic parameter and layer gradients against f64 central differences.
pub fn gradient_suite(models: usize) -> Outcome {
    let start = Instant::now();
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..models as u64 {
        let model = random_cnn(1000 + seed);
        let net = Net64::from_model(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform_input(&mut rng, model.input_len());
        let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let label = rng.random_range(0..model.class_count());

        let (_, analytic) = loss_gradients(&model, &x, label).unwrap();
        let numeric = fd_param_gradients(&net, &x64, label, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            if let (Some(a), Some((nw, nb))) = (a, n) {
                for (g, r) in a.weight.data().iter().chain(a.bias.data()).zip(nw.iter().chain(nb)) {
                    max_err = max_err.max((f64::from(*g) - r).abs());
                    checked += 1;
                }
            }
        }

        let input = Tensor::new(model.input_shape().to_vec(), x.clone()).unwrap();
        let class = rng.random_range(0..model.class_count());
        let last = model.layers().len() - 1;
        for layer in model.parameterized_layers().into_iter().filter(|&l| l != last) {
            let analytic = model.grad_wrt_layer(&input, class, layer).unwrap();
            let numeric = fd_layer_gradient(&net, &x64, class, layer, 1e-6);
            for (g, r) in analytic.data().iter().zip(&numeric) {
                max_err = max_err.max((f64::from(*g) - r).abs());
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        "gradient check",
        max_err <= 1e-3 && elapsed <= Duration::from_secs(60),
        format!("max abs error {max_err:.2e} over {checked} entries, {models} models, {}", secs(elapsed)),
    )
}

/// Relative completeness error of layer conductance at each step count, per (model, layer).
pub fn conductance_errors(models: usize, steps: &[usize]) -> Vec<Vec<f64>> {
    let arch = Architecture {
        conv_channels: vec![4, 8],
        hidden_units: vec![16],
    };
    let mut rows = Vec::new();
    for seed in 0..models as u64 {
        let model = TensorModel::with_architecture("probe", Domain::Source, &arch, vec![1, 12, 12], 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        // with zero biases a ReLU net is linear along the ray from a zero
        // baseline and every step count is exact
        let model = replace_params(model, |_, _, p| Params {
            weight: p.weight.clone(),
            bias: Tensor::new(
                p.bias.shape().to_vec(),
                (0..p.bias.len()).map(|_| rng.random_range(-0.3..0.3)).collect(),
            )
            .unwrap(),
        });
        let x = uniform_input(&mut rng, model.input_len());
        let zero = vec![0.0f32; x.len()];
        let net = Net64::from_model(&model);
        let fx = net.logits(&x.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let f0 = net.logits(&vec![0.0; x.len()]);
        // the logit that moves most, so the relative error is well conditioned
        let class = (0..fx.len())
            .max_by(|&a, &b| (fx[a] - f0[a]).abs().total_cmp(&(fx[b] - f0[b]).abs()))
            .unwrap();
        let delta = fx[class] - f0[class];
        let layers: Vec<usize> = model.parameterized_layers().into_iter().filter(|&l| l + 1 < model.layers().len()).collect();
        let per_steps: Vec<Vec<Vec<f32>>> = steps
            .iter()
            .map(|&s| conductance_layers(&model, &x, &zero, class, &layers, s).unwrap())
            .collect();
        for slot in 0..layers.len() {
            rows.push(
                per_steps
                    .iter()
                    .map(|c| {
                        let total: f64 = c[slot].iter().map(|&v| f64::from(v)).sum();
                        (total - delta).abs() / delta.abs()
                    })
                    .collect(),
            );
        }
    }
    rows
}

pub fn conductance_suite(models: usize) -> Outcome {
    let start = Instant::now();
    let steps = [32, 128, 512];
    let errors = conductance_errors(models, &steps);
    let worst = errors.iter().map(|e| e[2]).fold(0.0, f64::max);
    let increasing = errors.iter().filter(|e| e.windows(2).any(|w| w[1] > w[0])).count();
    let mean: Vec<f64> = (0..steps.len()).map(|s| errors.iter().map(|e| e[s]).sum::<f64>() / errors.len() as f64).collect();
    let elapsed = start.elapsed();
    Outcome::new(
        "conductance completeness",
        worst <= 0.01 && increasing == 0 && elapsed <= Duration::from_secs(120),
        format!(
            "max relative error {worst:.2e} at 512 steps; {increasing}/{} layer series rise between 32/128/512 (mean {:.1e}/{:.1e}/{:.1e}); {}",
            errors.len(),
            mean[0],
            mean[1],
            mean[2],
            secs(elapsed)
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, tied: bool) -> AttributionMatrix {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let columns: Vec<Vec<f32>> = (0..cols)
        .map(|_| {
            (0..rows)
                .map(|_| if tied { rng.random_range(0..4) as f32 * 0.5 } else { normal.sample(rng) })
                .collect()
        })
        .collect();
    AttributionMatrix::from_columns(0, 0, Domain::Target, 32, &columns, (0..cols).collect()).unwrap()
}

pub fn ranking_suite(matrices: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = Vec::new();
    for m in 0..matrices {
        let (rows, cols) = (rng.random_range(1..=20), rng.random_range(1..=15));
        let a = random_matrix(&mut rng, rows, cols, m % 2 == 0);
        let ranks = fractional_rank_columns(&a).unwrap();
        let mut agg = vec![0.0f64; rows];
        for p in 0..cols {
            for (j, r) in brute_ranks(&a.column(p)).into_iter().enumerate() {
                if ranks.get(j, p) != r {
                    mismatches.push(format!("matrix {m} rank ({j},{p})"));
                }
                agg[j] += r;
            }
        }
        let k = rows.div_ceil(10);
        let ranking = extract_important_neurons(&a).unwrap();
        if ranking.aggregated_rank != agg || ranking.k != k || important_neuron_count(rows) != k {
            mismatches.push(format!("matrix {m} aggregation"));
        }
        if ranking.important != brute_top_k(&agg, k) {
            mismatches.push(format!("matrix {m} selection"));
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        "ranking oracle",
        mismatches.is_empty() && elapsed <= Duration::from_secs(10),
        format!("{matrices} matrices, {} mismatches{}, {}", mismatches.len(), first(&mismatches), secs(elapsed)),
    )
}

fn first(items: &[String]) -> String {
    items.first().map(|s| format!(" (first: {s})")).unwrap_or_default()
}

fn eighths(rng: &mut ChaCha8Rng, n: usize, half_range: i32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-half_range..=half_range) as f32 / 8.0).collect()
}

/// Random toy model and pair whose parameters and inputs are small dyadic
/// rationals, so f32 and f64 arithmetic agree exactly and ties are common.
pub fn toy_pair(seed: u64) -> (TensorModel, LayerPair, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = seed % 3;
    let mut specs = Vec::new();
    let conv = |rng: &mut ChaCha8Rng, in_channels: usize, side: usize| {
        let kernel = rng.random_range(1..=3usize).min(side);
        LayerSpec::Conv2d {
            in_channels,
            out_channels: rng.random_range(2..=4),
            kernel,
            stride: 1,
            padding: if kernel == 3 { rng.random_range(0..=1) } else { 0 },
        }
    };
    let input = if kind == 2 {
        let f = rng.random_range(3..=8);
        let (a, b) = (rng.random_range(3..=6), rng.random_range(2..=5));
        specs.extend([LayerSpec::dense(f, a), LayerSpec::Relu, LayerSpec::dense(a, b), LayerSpec::Relu]);
        vec![f]
    } else {
        let input = vec![rng.random_range(1..=2), rng.random_range(4..=6), rng.random_range(4..=6)];
        let first = conv(&mut rng, input[0], input[1].min(input[2]));
        let mut shape = first.output_shape(&input).unwrap();
        specs.extend([first, LayerSpec::Relu]);
        if shape[1] >= 4 && shape[2] >= 4 && rng.random_bool(0.5) {
            specs.push(LayerSpec::pool(2));
            shape = LayerSpec::pool(2).output_shape(&shape).unwrap();
        }
        if kind == 0 {
            let second = conv(&mut rng, shape[0], shape[1].min(shape[2]));
            shape = second.output_shape(&shape).unwrap();
            specs.extend([second, LayerSpec::Relu]);
        } else {
            let features = shape.iter().product();
            let hidden = rng.random_range(3..=5);
            specs.extend([LayerSpec::Flatten, LayerSpec::dense(features, hidden), LayerSpec::Relu]);
            shape = vec![hidden];
        }
        if shape.len() == 3 {
            specs.push(LayerSpec::Flatten);
        }
        input
    };
    let to = specs.iter().rposition(|s| s.is_parameterized()).unwrap();
    let mut shape = input.clone();
    for s in &specs {
        shape = s.output_shape(&shape).unwrap();
    }
    specs.push(LayerSpec::dense(shape.iter().product(), 2));
    let model = TensorModel::new("toy", Domain::Target, input.clone(), specs, 2, seed).unwrap();
    let model = replace_params(model, |_, _, p| Params {
        weight: Tensor::new(p.weight.shape().to_vec(), eighths(&mut rng, p.weight.len(), 8)).unwrap(),
        bias: Tensor::new(p.bias.shape().to_vec(), eighths(&mut rng, p.bias.len(), 4)).unwrap(),
    });
    let n = rng.random_range(1..=6);
    let len: usize = input.iter().product();
    let values: Vec<f32> = (0..n * len).map(|_| rng.random_range(0..=4) as f32 / 4.0).collect();
    let mut batch_shape = vec![n];
    batch_shape.extend(&input);
    let data = LabeledDataset::new(
        Tensor::new(batch_shape, values).unwrap(),
        vec![0; n],
        vec!["a".into(), "b".into()],
        Domain::Target,
        Split::Train,
    )
    .unwrap();
    (model, LayerPair { from: 0, to }, data)
}

pub fn weight_suite(pairs: usize) -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut kinds = [0usize; 3];
    for seed in 0..pairs as u64 {
        let (model, pair, data) = toy_pair(seed);
        kinds[(seed % 3) as usize] += 1;
        let net = Net64::from_model(&model);
        let n_from = model.neuron_count(pair.from);
        let n_to = model.neuron_count(pair.to);
        let total = n_from * n_to;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let (k_row, k_w) = if seed % 2 == 0 {
            (None, None)
        } else {
            (Some(rng.random_range(1..=total)), Some(rng.random_range(1..=total)))
        };
        let reduction = if seed % 4 == 1 { SpatialReduction::Sum } else { SpatialReduction::Max };
        let kr = k_row.unwrap_or_else(|| (total as f64 * 0.05).ceil() as usize).max(1);
        let kw = k_w.unwrap_or(kr.min(50));

        let mut counts = vec![0u32; total];
        let mut sums = vec![0.0f64; total];
        for i in 0..data.len() {
            let x: Vec<f64> = data.instance(i).iter().map(|&v| f64::from(v)).collect();
            let act = net.forward(&x)[pair.to - 1].clone();
            let s = brute_strengths(&net, pair.to, model.layer_input_shape(pair.to), &act, n_from, reduction == SpatialReduction::Sum);
            let act32: Vec<f32> = act.iter().map(|&v| v as f32).collect();
            let ours = strengths_from_input(&model, pair, &act32, reduction).unwrap();
            if ours.iter().zip(&s).any(|(a, b)| f64::from(*a) != *b) {
                mismatches.push(format!("pair {seed} instance {i} strengths"));
            }
            for idx in brute_top_k(&s, kr) {
                counts[idx] += 1;
            }
            for (acc, v) in sums.iter_mut().zip(&s) {
                *acc += v;
            }
        }
        let expected: Vec<(usize, usize, u32)> = brute_top_k(&counts, kw).into_iter().map(|i| (i / n_to, i % n_to, counts[i])).collect();
        let imp = extract_important_weights(&model, &data, 0, pair, k_row, k_w, reduction).unwrap();
        let got: Vec<(usize, usize, u32)> = imp.important.iter().map(|w| (w.from, w.to, w.count)).collect();
        if imp.counts != counts {
            mismatches.push(format!("pair {seed} counts"));
        }
        if got != expected || imp.k_row != kr || imp.k_w != kw {
            mismatches.push(format!("pair {seed} selection"));
        }
        let n = data.len() as f64;
        if imp.mean_strength.iter().zip(&sums).any(|(m, s)| (f64::from(*m) - s / n).abs() > 1e-6 * (1.0 + s / n)) {
            mismatches.push(format!("pair {seed} mean strength"));
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        "weight extraction oracle",
        mismatches.is_empty(),
        format!(
            "{pairs} pairs (conv-conv {}, conv-dense {}, dense-dense {}), {} mismatches{}, {}",
            kinds[0],
            kinds[1],
            kinds[2],
            mismatches.len(),
            first(&mismatches),
            secs(elapsed)
        ),
    )
}

fn json<T: serde::de::DeserializeOwned>(files: &tlens_core::pipeline::ArtifactFiles, path: &str) -> T {
    serde_json::from_slice(files.get(path).unwrap_or_else(|| panic!("missing {path}"))).unwrap()
}

/// One outcome per identity property of a run whose source and target coincide.
pub fn self_transfer_suite(cfg: &RunConfig) -> Vec<Outcome> {
    let start = Instant::now();
    let (_, files, summary) = build_artifact(cfg).unwrap();
    let elapsed = start.elapsed();
    let manifest: Manifest = json(&files, "manifest.json");
    let (mut lists, mut list_diff) = (0, 0);
    let (mut nonzero, mut partner_diff) = (0, 0);
    let (mut entries, mut inherited, mut pies, mut full_pies) = (0, 0, 0, 0);
    let (mut entries_live, mut inherited_live) = (0, 0);
    for ci in &manifest.index {
        let mut live: std::collections::BTreeMap<usize, Vec<bool>> = Default::default();
        for &l in &ci.layers {
            let rank = |d| -> NeuronRanking { json(&files, &rankings_path(ci.class, l, d)) };
            lists += 1;
            if rank(Domain::Source).important != rank(Domain::Target).important {
                list_diff += 1;
            }
            let attr = AttributionMatrix::from_bytes(files.get(&attribution_path(ci.class, l, Domain::Target)).unwrap()).unwrap();
            let sim: SimilarityFile = json(&files, &similarity_path(ci.class, l));
            let alive: Vec<bool> = (0..attr.rows).map(|j| attr.row(j).iter().any(|&v| v != 0.0)).collect();
            for (k, &a) in alive.iter().enumerate() {
                if a {
                    nonzero += 1;
                    if sim.matrix.target_partner[k] != k {
                        partner_diff += 1;
                    }
                }
            }
            live.insert(attr.layer, alive);
        }
        for &p in &ci.pairs {
            let w: WeightsFile = json(&files, &weights_path(ci.class, p));
            for e in &w.correspondence.entries {
                entries += 1;
                inherited += usize::from(e.inherited);
                if live[&w.correspondence.pair.from][e.from] && live[&w.correspondence.pair.to][e.to] {
                    entries_live += 1;
                    inherited_live += usize::from(e.inherited);
                }
            }
            for g in w.target_regions.region2.iter().chain(&w.target_regions.region3) {
                if let Some(f) = g.pie_fraction {
                    pies += 1;
                    full_pies += usize::from(f == 1.0);
                }
            }
        }
    }
    let budget = elapsed <= Duration::from_secs(300);
    let score = summary.transferability.score;
    vec![
        Outcome::new(
            "self-transfer: important lists equal",
            list_diff == 0 && budget,
            format!("{}/{lists} (class, layer) lists identical; run {}", lists - list_diff, secs(elapsed)),
        ),
        Outcome::new(
            "self-transfer: argmax partner is identity",
            partner_diff == 0 && nonzero > 0,
            format!("{}/{nonzero} nonzero-attribution neurons map to themselves", nonzero - partner_diff),
        ),
        Outcome::new(
            "self-transfer: all important weights inherited",
            inherited == entries && full_pies == pies,
            format!(
                "{inherited}/{entries} inherited, {full_pies}/{pies} pie fractions 1.0 \
                 (restricted to weights between nonzero-attribution neurons: {inherited_live}/{entries_live})"
            ),
        ),
        Outcome::new("self-transfer: transferability zero", score.abs() <= 1e-9, format!("score {score:e}")),
    ]
}

fn table(values: Vec<f64>, labels: Vec<u8>, cols: usize) -> DomainAttributionTable {
    let rows = labels.len();
    let neurons = (0..cols).map(|id| NeuronRef { layer: 0, id }).collect();
    DomainAttributionTable::new(0, neurons, values, labels, (0..rows).collect()).unwrap()
}

/// `rows` rows, `cols` standard-normal features; column `sep` (if any) is
/// shifted by the label. `shuffle` then detaches the rows from their labels.
pub fn domain_table(rows: usize, cols: usize, sep: Option<usize>, shuffle: bool, seed: u64) -> DomainAttributionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<u8> = (0..rows).map(|r| u8::from(r >= rows / 2)).collect();
    let mut body: Vec<Vec<f64>> = labels
        .iter()
        .map(|&label| {
            (0..cols)
                .map(|c| {
                    if Some(c) == sep {
                        let mag = rng.random_range(1.0..3.0);
                        if label == 0 { -mag } else { mag }
                    } else {
                        normal.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect();
    // tables keep source rows first, so shuffling labels means permuting rows
    if shuffle {
        body.shuffle(&mut rng);
    }
    table(body.concat(), labels, cols)
}

fn sign_agreement(t: &DomainAttributionTable, seed: u64) -> (usize, usize, f64, Vec<usize>) {
    let fit = train_domain_svm(t, seed).unwrap();
    let result = biplot_projection(t, &fit, seed).unwrap();
    let agree = (0..t.rows)
        .filter(|&r| (result.projection.coordinates[r][0] > result.threshold) == (fit.svm.predict(t.row(r)) == 1))
        .count();
    (agree, t.rows, fit.cv_accuracy, result.ranking)
}

pub fn discriminability_suite() -> Vec<Outcome> {
    let sep = 3;
    let separable = domain_table(120, 8, Some(sep), false, 11);
    let (agree_a, rows_a, cv_sep, ranking) = sign_agreement(&separable, 0);
    let shuffled = domain_table(200, 8, Some(sep), true, 12);
    let (agree_b, rows_b, cv_shuf, _) = sign_agreement(&shuffled, 0);
    let mixed = domain_table(90, 6, Some(1), true, 13);
    let (agree_c, rows_c, _, _) = sign_agreement(&mixed, 0);

    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (rows, cols) = (rng.random_range(20..=60), rng.random_range(2..=12));
        let dir: Vec<f64> = (0..cols).map(|_| normal.sample(&mut rng)).collect();
        let values: Vec<f64> = (0..rows)
            .flat_map(|_| {
                let z = 3.0 * normal.sample(&mut rng);
                dir.iter().map(|d| z * d + normal.sample(&mut rng)).collect::<Vec<_>>()
            })
            .collect();
        let ours = first_principal_component(&values, rows, cols, seed).unwrap();
        let oracle = eigen_first_component(&values, rows, cols);
        let err = |s: f64| ours.iter().zip(&oracle).map(|(a, b)| (a - s * b).abs()).fold(0.0, f64::max);
        worst = worst.max(err(1.0).min(err(-1.0)));
    }

    vec![
        Outcome::new(
            "discriminability: separable table",
            cv_sep >= 0.95 && ranking[0] == sep,
            format!("CV accuracy {cv_sep:.3}, top feature {} (separating {sep})", ranking[0]),
        ),
        Outcome::new(
            "discriminability: shuffled labels",
            (0.35..=0.65).contains(&cv_shuf),
            format!("CV accuracy {cv_shuf:.3} on {rows_b} rows"),
        ),
        Outcome::new(
            "discriminability: PCA vs eigensolver",
            worst <= 1e-6,
            format!("max component error {worst:.2e} up to sign over 10 tables"),
        ),
        Outcome::new(
            "discriminability: projection sign",
            agree_a == rows_a && agree_b == rows_b && agree_c == rows_c,
            format!("{}/{} rows agree with SVM predictions", agree_a + agree_b + agree_c, rows_a + rows_b + rows_c),
        ),
    ]
}

/// Two Gaussian blobs of `n / 2` points each in `dim` dimensions, `gap` apart.
pub fn two_clusters(n: usize, dim: usize, gap: f32, seed: u64) -> (Vec<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let values = labels
        .iter()
        .flat_map(|&l| (0..dim).map(|_| normal.sample(&mut rng) + l as f32 * gap).collect::<Vec<_>>())
        .collect();
    (values, labels)
}

pub fn nearest_neighbor_purity(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    let hits = (0..coords.len())
        .filter(|&i| {
            let nn = (0..coords.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let d = |j: usize| (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            labels[nn] == labels[i]
        })
        .count();
    hits as f64 / coords.len() as f64
}

pub fn tsne_suite() -> Vec<Outcome> {
    let mut worst = 0.0f64;
    for (seed, perplexity) in [(1u64, 5.0), (2, 10.0), (3, 20.0), (4, 30.0)] {
        let (v, _) = two_clusters(100, 6, 3.0, seed);
        let d = squared_distances(&v, 100, 6);
        let a = input_affinities(&d, 100, perplexity);
        worst = worst.max(a.perplexities.iter().map(|p| (p - perplexity).abs()).fold(0.0, f64::max));
    }

    let (v, labels) = two_clusters(40, 10, 4.0, 21);
    let cfg = TsneConfig {
        perplexity: 10.0,
        ..TsneConfig::default()
    };
    let a = tsne(&v, 40, 10, &cfg).unwrap();
    let b = tsne(&v, 40, 10, &cfg).unwrap();
    let other = tsne(&v, 40, 10, &TsneConfig { seed: 1, ..cfg.clone() }).unwrap();
    let purity = nearest_neighbor_purity(&a.coordinates, &labels);
    let identical = a.coordinates == b.coordinates && a.kl.to_bits() == b.kl.to_bits();

    vec![
        Outcome::new(
            "t-SNE: perplexity bisection",
            worst <= 1e-3,
            format!("max perplexity error {worst:.2e} (perplexity 5/10/20/30, 100 points)"),
        ),
        Outcome::new(
            "t-SNE: two-cluster purity",
            purity >= 0.9,
            format!("1-NN purity {purity:.3} on 40 points, KL {:.3}", a.kl),
        ),
        Outcome::new(
            "t-SNE: deterministic under fixed seed",
            identical,
            format!(
                "repeat run {}; another seed {}",
                if identical { "bit-identical" } else { "differs" },
                if other.coordinates != a.coordinates { "differs" } else { "identical" }
            ),
        ),
    ]
}

pub fn determinism_suite(label: &str, cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let (_, a, _) = build_artifact(cfg).unwrap();
    let (_, b, _) = build_artifact(cfg).unwrap();
    let differing: Vec<&str> = a.paths().filter(|p| a.get(p) != b.get(p)).collect();
    let same_set = a.paths().eq(b.paths());
    Outcome::new(
        &format!("determinism: {label}"),
        same_set && differing.is_empty(),
        format!(
            "{} files, {} differ{}, {}",
            a.len(),
            differing.len(),
            differing.first().map(|p| format!(" (first: {p})")).unwrap_or_default(),
            secs(start.elapsed())
        ),
    )
}
