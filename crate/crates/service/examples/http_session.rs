//! Drives the HTTP API in-process: upload a design, read its joints, request
//! a warp edit, select the best candidate and refine it.
//!
//! cargo run --release -p topoedit-service --example http_session -- [MODEL.ckpt]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use topoedit::diffusion::unet::UNetConfig;
use topoedit::diffusion::Denoiser;
use topoedit::fem::{optimize, FemModel, SimpOptions};
use topoedit::ProblemSpec;
use topoedit_service::api::{router, AppState, LoadedModel};
use topoedit_service::store::Store;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    println!("{method} {uri} -> {status}");
    v
}

#[tokio::main]
async fn main() {
    let model = match std::env::args().nth(1) {
        Some(p) => LoadedModel::from_denoiser(Denoiser::load(&p).unwrap(), Some(p)),
        None => LoadedModel::from_denoiser(Denoiser::new(UNetConfig::tiny(), 0, 200), None),
    };
    let store = std::env::temp_dir().join(format!("topoedit-example-{}", std::process::id()));
    let app = router(Arc::new(AppState::new(Store::open(&store).unwrap(), model, None, 1)));

    let spec = ProblemSpec::cantilever(64, 32, 0.3);
    let field = optimize(&spec, &FemModel::default(), &SimpOptions::default(), 64, 32, 60, |_| {}).unwrap().field;
    let s = call(&app, "POST", "/sessions", Some(json!({"field": field, "spec": spec}))).await;
    let id = s["session_id"].as_str().unwrap().to_string();

    let topo = call(&app, "GET", &format!("/sessions/{id}/topology"), None).await;
    let joint = topo["joints"].get(0).cloned().unwrap_or(json!([0.5, 0.5]));
    println!("compliance {}, first joint {joint}", topo["compliance"]);

    let body = json!({
        "kind": "warp",
        "warp": {"handles": [{"x": joint[0], "y": joint[1], "dx": 0.0, "dy": 0.08, "sigma": 0.1}]},
        "config": {"num_samples": 4}
    });
    let e = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(body)).await;
    let edit_id = e["edit_id"].as_str().unwrap().to_string();
    let done = loop {
        let v = call(&app, "GET", &format!("/edits/{edit_id}"), None).await;
        if v["status"] == "done" || v["status"] == "failed" {
            break v;
        }
        tokio::time::sleep(Duration::from_millis(500)).await;
    };
    for c in done["result"]["candidates"].as_array().into_iter().flatten() {
        let m = &c["stages"].as_array().and_then(|s| s.last()).map(|s| s["metrics"].clone()).unwrap_or_default();
        println!("candidate {}: ce {} de {}", c["index"], m["ce"], m["de"]);
    }
    let best = done["result"]["best_index"].as_u64().unwrap_or(0);
    let sel = call(&app, "POST", &format!("/edits/{edit_id}/select"), Some(json!({"candidate_index": best}))).await;
    println!("committed candidate {best}: {}", sel["field_hash"]);
    let r = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({"steps": 5}))).await;
    println!("after refinement: compliance {}", r["compliance"]);
    std::fs::remove_dir_all(store).ok();
}
