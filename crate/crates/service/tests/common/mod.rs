#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use tlens_service::{router, ArtifactStore};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn toy_store() -> ArtifactStore {
    ArtifactStore::new(fixtures().join("artifacts"))
}

pub async fn get(store: &ArtifactStore, uri: &str) -> (StatusCode, Option<String>, Vec<u8>) {
    let response = router(store.clone())
        .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let content_type = response
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, content_type, body)
}

/// Sorted keys, pretty printed.
pub fn canonical(bytes: &[u8]) -> String {
    let v: Value = serde_json::from_slice(bytes).expect("JSON body");
    serde_json::to_string_pretty(&v).unwrap() + "\n"
}

/// (golden name, request path, expected status)
pub const GOLDEN: &[(&str, &str, u16)] = &[
    ("runs", "/api/runs", 200),
    ("manifest", "/api/runs/toy", 200),
    ("summary", "/api/runs/toy/summary", 200),
    ("instances_pair", "/api/runs/toy/instances?classes=1,0", 200),
    ("instances_single", "/api/runs/toy/instances?classes=1", 200),
    ("similarity", "/api/runs/toy/similarity?class=0&layer=1", 200),
    ("weights", "/api/runs/toy/weights?class=1&pair=0", 200),
    ("neuron_target", "/api/runs/toy/neuron?model=target&layer=2&id=3&class=0", 200),
    ("neuron_default_class", "/api/runs/toy/neuron?model=source&layer=0&id=1", 200),
    ("discriminability", "/api/runs/toy/discriminability?class=0", 200),
    ("discriminability_asc", "/api/runs/toy/discriminability?class=1&order=asc", 200),
    ("discriminability_active", "/api/runs/toy/discriminability?class=0&active=0,1", 200),
    ("err_unknown_run", "/api/runs/nope/summary", 404),
    ("err_unknown_layer", "/api/runs/toy/similarity?class=0&layer=9", 404),
    ("err_unknown_class", "/api/runs/toy/weights?class=7&pair=0", 404),
    ("err_bad_layer", "/api/runs/toy/similarity?class=0&layer=x", 400),
    ("err_missing_param", "/api/runs/toy/weights?class=0", 400),
    ("err_no_projection", "/api/runs/toy/instances?classes=0,5", 404),
    ("err_bad_model", "/api/runs/toy/neuron?model=other&layer=0&id=0", 400),
    ("err_unknown_neuron", "/api/runs/toy/neuron?model=target&layer=0&id=99", 404),
    ("err_bad_order", "/api/runs/toy/discriminability?class=0&order=up", 400),
    ("err_unknown_endpoint", "/api/nothing", 404),
];

/// Compare every golden endpoint; with `TLENS_BLESS=1` rewrite the goldens instead.
/// Returns one message per mismatch.
pub async fn check_goldens() -> Vec<String> {
    let store = toy_store();
    let bless = std::env::var("TLENS_BLESS").is_ok_and(|v| v == "1");
    let dir = fixtures().join("golden");
    let mut failures = Vec::new();
    for &(name, uri, status) in GOLDEN {
        let (got_status, content_type, body) = get(&store, uri).await;
        if got_status.as_u16() != status {
            failures.push(format!("{name}: {uri} returned {got_status}, expected {status}"));
            continue;
        }
        if content_type.as_deref() != Some("application/json") {
            failures.push(format!("{name}: content type {content_type:?}"));
            continue;
        }
        let text = canonical(&body);
        let path = dir.join(format!("{name}.json"));
        if bless {
            std::fs::write(&path, &text).unwrap();
        } else {
            match std::fs::read_to_string(&path) {
                Ok(expected) if expected == text => {}
                Ok(_) => failures.push(format!("{name}: body differs from {}", path.display())),
                Err(e) => failures.push(format!("{name}: {}: {e}", path.display())),
            }
        }
    }
    failures
}
