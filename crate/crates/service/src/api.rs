use std::collections::HashMap;

use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::Value;
use tlens_core::discriminability::restricted_projection;
use tlens_core::nn::Domain;
use tlens_core::pipeline::artifact::{
    discriminability_path, instances_path, neurons_path, similarity_path, weights_path, SUMMARY,
};
use tlens_core::pipeline::{DataConfig, DiscriminabilityFile, Manifest, NeuronFile};

use crate::error::ApiError;
use crate::store::ArtifactStore;

type Params = Query<HashMap<String, String>>;
type ApiResult = Result<Response, ApiError>;

pub fn router(store: ArtifactStore) -> Router {
    Router::new()
        .route("/api/runs", get(runs))
        .route("/api/runs/{id}", get(manifest))
        .route("/api/runs/{id}/summary", get(summary))
        .route("/api/runs/{id}/instances", get(instances))
        .route("/api/runs/{id}/similarity", get(similarity))
        .route("/api/runs/{id}/weights", get(weights))
        .route("/api/runs/{id}/neuron", get(neuron))
        .route("/api/runs/{id}/discriminability", get(discriminability))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(store)
}

fn raw_json(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn required<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str, ApiError> {
    q.get(key)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{key}`")))
}

fn number(q: &HashMap<String, String>, key: &str) -> Result<usize, ApiError> {
    let v = required(q, key)?;
    v.parse()
        .map_err(|_| ApiError::bad_request(format!("`{key}` must be a non-negative integer, got `{v}`")))
}

fn number_list(raw: &str, key: &str) -> Result<Vec<usize>, ApiError> {
    raw.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ApiError::bad_request(format!("`{key}` must be comma-separated integers, got `{raw}`")))
        })
        .collect()
}

fn check_class(m: &Manifest, class: usize) -> Result<&tlens_core::pipeline::artifact::ClassIndex, ApiError> {
    m.class_index(class)
        .ok_or_else(|| ApiError::not_found(format!("class {class} was not analyzed in run `{}`", m.run_id)))
}

#[derive(Serialize)]
struct RunListing {
    id: String,
    classes: Vec<String>,
    analyzed_classes: Vec<usize>,
    data_format: &'static str,
    source_epochs: usize,
    target_epochs: usize,
    steps: usize,
    neuron_layers: usize,
    pairs: usize,
}

async fn runs(State(store): State<ArtifactStore>) -> Result<Json<Vec<RunListing>>, ApiError> {
    let mut out = Vec::new();
    for id in store.run_ids()? {
        let m = store.manifest(&id)?;
        let cfg = store.config(&id)?;
        out.push(RunListing {
            classes: m.classes.iter().map(|c| c.name.clone()).collect(),
            analyzed_classes: m.index.iter().map(|c| c.class).collect(),
            data_format: match cfg.data {
                DataConfig::Idx { .. } => "idx",
                DataConfig::Synthetic { .. } => "synthetic",
                DataConfig::Tlns { .. } => "tlns",
            },
            source_epochs: cfg.training.source.epochs,
            target_epochs: cfg.training.target.epochs,
            steps: cfg.analysis.steps,
            neuron_layers: m.neuron_layers.len(),
            pairs: m.pairs.len(),
            id,
        });
    }
    Ok(Json(out))
}

async fn manifest(State(store): State<ArtifactStore>, Path(id): Path<String>) -> ApiResult {
    store.manifest(&id)?;
    Ok(raw_json(store.read(&id, tlens_core::pipeline::artifact::MANIFEST)?))
}

async fn summary(State(store): State<ArtifactStore>, Path(id): Path<String>) -> ApiResult {
    Ok(raw_json(store.read(&id, SUMMARY)?))
}

async fn instances(State(store): State<ArtifactStore>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let m = store.manifest(&id)?;
    let mut classes = number_list(required(&q, "classes")?, "classes")?;
    if classes.is_empty() {
        return Err(ApiError::bad_request("`classes` must name at least one class"));
    }
    classes.sort_unstable();
    classes.dedup();
    if !m.projections.contains(&classes) {
        return Err(ApiError::not_found(format!("no projection for classes {classes:?}")));
    }
    Ok(raw_json(store.read(&id, &instances_path(&classes))?))
}

async fn similarity(State(store): State<ArtifactStore>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let m = store.manifest(&id)?;
    let (class, layer) = (number(&q, "class")?, number(&q, "layer")?);
    if !check_class(&m, class)?.layers.contains(&layer) {
        return Err(ApiError::not_found(format!("layer {layer} not available for class {class}")));
    }
    Ok(raw_json(store.read(&id, &similarity_path(class, layer))?))
}

async fn weights(State(store): State<ArtifactStore>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let m = store.manifest(&id)?;
    let (class, pair) = (number(&q, "class")?, number(&q, "pair")?);
    if !check_class(&m, class)?.pairs.contains(&pair) {
        return Err(ApiError::not_found(format!("layer pair {pair} not available for class {class}")));
    }
    Ok(raw_json(store.read(&id, &weights_path(class, pair))?))
}

async fn neuron(State(store): State<ArtifactStore>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let m = store.manifest(&id)?;
    let model: Domain = required(&q, "model")?
        .parse()
        .map_err(|_| ApiError::bad_request("`model` must be `source` or `target`"))?;
    let (layer, neuron) = (number(&q, "layer")?, number(&q, "id")?);
    let class = match q.get("class") {
        Some(_) => number(&q, "class")?,
        None => m.index.first().map(|c| c.class).ok_or_else(|| ApiError::not_found("run has no analyzed class"))?,
    };
    if !check_class(&m, class)?.layers.contains(&layer) {
        return Err(ApiError::not_found(format!("layer {layer} not available for class {class}")));
    }
    let file: NeuronFile = store.json(&id, &neurons_path(class, layer, model))?;
    let detail = file
        .neurons
        .into_iter()
        .find(|n| n.id == neuron)
        .ok_or_else(|| ApiError::not_found(format!("layer {layer} has no neuron {neuron}")))?;
    Ok(Json(serde_json::json!({
        "class_id": class,
        "layer": layer,
        "model": model,
        "neuron": detail,
    }))
    .into_response())
}

async fn discriminability(State(store): State<ArtifactStore>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let m = store.manifest(&id)?;
    let class = number(&q, "class")?;
    if !check_class(&m, class)?.discriminability {
        return Err(ApiError::not_found(format!("no discriminability result for class {class}")));
    }
    let descending = match q.get("order").map(String::as_str) {
        None | Some("desc") => true,
        Some("asc") => false,
        Some(other) => return Err(ApiError::bad_request(format!("`order` must be `asc` or `desc`, got `{other}`"))),
    };
    let active = q.get("active").map(|raw| number_list(raw, "active")).transpose()?;
    if descending && active.is_none() {
        return Ok(raw_json(store.read(&id, &discriminability_path(class))?));
    }
    let mut file: DiscriminabilityFile = store.json(&id, &discriminability_path(class))?;
    if !descending {
        file.features.reverse();
    }
    let mut body = serde_json::to_value(&file).map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(active) = active {
        let restricted = restricted_projection(&file.table, &file.result, &active).map_err(|e| ApiError::bad_request(e.to_string()))?;
        body["restricted"] = serde_json::to_value(restricted).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json::<Value>(body).into_response())
}
