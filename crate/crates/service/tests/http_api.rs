use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use topoedit::diffusion::unet::UNetConfig;
use topoedit::diffusion::Denoiser;
use topoedit::io::grid_hash;
use topoedit::morphology::skeletonize;
use topoedit::{DensityField, Grid, ProblemSpec};
use topoedit_service::api::{router, AppState, LoadedModel};
use topoedit_service::store::Store;

fn temp_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("topoedit-http-{tag}-{}", uuid::Uuid::new_v4()))
}

fn app(dir: &Path) -> Router {
    let model = LoadedModel::from_denoiser(Denoiser::new(UNetConfig::tiny(), 7, 200), None);
    router(Arc::new(AppState::new(Store::open(dir).unwrap(), model, None, 1)))
}

/// Frame with two vertical bars and a diagonal, 32×16.
fn design() -> (DensityField, ProblemSpec) {
    let g = Grid::from_fn(32, 16, |i, j| {
        let bar = j < 3 || j >= 13 || i < 3 || i >= 29 || (i as isize - 2 * j as isize).abs() < 3;
        if bar {
            1.0
        } else {
            0.0
        }
    });
    let f = DensityField::try_from(g).unwrap();
    let vf = f.mean();
    (f, ProblemSpec::cantilever(32, 16, vf))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn new_session(app: &Router) -> String {
    let (f, s) = design();
    let (st, v) = call(app, "POST", "/sessions", Some(json!({"field": f, "spec": s})), None).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn wait_done(app: &Router, edit_id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (st, v) = call(app, "GET", &format!("/edits/{edit_id}"), None, None).await;
        assert_eq!(st, StatusCode::OK);
        match v["status"].as_str().unwrap() {
            "done" | "failed" => return v,
            _ => {
                assert!(start.elapsed() < Duration::from_secs(300), "edit did not finish");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

fn small_cfg() -> Value {
    json!({"num_samples": 2, "partial_steps": 3, "total_steps": 20, "refine_steps": 2})
}

fn warp_body(dx: f64) -> Value {
    json!({"kind": "warp", "warp": {"handles": [{"x": 0.5, "y": 0.5, "dx": dx, "dy": 0.0, "sigma": 0.1}]}, "config": small_cfg()})
}

#[tokio::test]
async fn health_and_model_carry_schema_version() {
    let dir = temp_dir("health");
    let app = app(&dir);
    let (st, v) = call(&app, "GET", "/healthz", None, None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["schema_version"], 1);
    let (_, v) = call(&app, "GET", "/model", None, None).await;
    assert_eq!(v["model"]["schedule"], "cosine");
    assert_eq!(v["model"]["arch_hash"].as_str().unwrap().len(), 32);
    let (st, v) = call(&app, "GET", "/nowhere", None, None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "route_not_found");
}

#[tokio::test]
async fn topology_joints_match_morphology() {
    let dir = temp_dir("topo");
    let app = app(&dir);
    let id = new_session(&app).await;
    let (st, v) = call(&app, "GET", &format!("/sessions/{id}/topology"), None, None).await;
    assert_eq!(st, StatusCode::OK);
    let joints: Vec<[f64; 2]> = serde_json::from_value(v["joints"].clone()).unwrap();
    assert_eq!(joints, skeletonize(&design().0).joints);
    assert!(v["compliance"].as_f64().unwrap() > 0.0);
    let (_, p) = call(&app, "GET", &format!("/sessions/{id}/topology?format=pgm"), None, None).await;
    assert!(p["field"]["pgm_base64"].as_str().unwrap().len() > 100);
}

#[tokio::test]
async fn invalid_requests_are_rejected_with_codes() {
    let dir = temp_dir("invalid");
    let app = app(&dir);
    let id = new_session(&app).await;
    // |delta| = 2 sigma is beyond sigma*sqrt(e).
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(warp_body(0.2)), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["message"].as_str().unwrap().contains("contraction bound"), "{v}");
    assert_eq!(v["schema_version"], 1);

    let bad_cfg = json!({"kind": "nodesign", "hole": {"center": [0.5, 0.5], "radius": 0.1}, "config": {"partial_steps": 500}});
    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(bad_cfg), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let (st, v) = call(&app, "POST", "/sessions/missing-id/edits", Some(warp_body(0.05)), None).await;
    assert_eq!((st, v["code"].as_str().unwrap()), (StatusCode::NOT_FOUND, "session_not_found"));
    let (st, v) = call(&app, "GET", "/edits/missing-id", None, None).await;
    assert_eq!((st, v["code"].as_str().unwrap()), (StatusCode::NOT_FOUND, "edit_not_found"));
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"field": 3})), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({"steps": 0})), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn edit_select_refine_round_trip_survives_restart() {
    let dir = temp_dir("flow");
    let app = app(&dir);
    let id = new_session(&app).await;
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(warp_body(0.05)), None).await;
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    let edit_id = v["edit_id"].as_str().unwrap().to_string();
    let done = wait_done(&app, &edit_id).await;
    assert_eq!(done["status"], "done", "{done}");
    let cands = done["result"]["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 2);
    for c in cands {
        for s in c["stages"].as_array().unwrap() {
            assert!(s["metrics"]["ce"].is_number());
            assert!(s["metrics"]["de"].is_number());
        }
    }

    let (st, sel) = call(&app, "POST", &format!("/edits/{edit_id}/select"), Some(json!({"candidate_index": 1})), None).await;
    assert_eq!(st, StatusCode::OK, "{sel}");
    let last = cands[1]["stages"].as_array().unwrap().last().unwrap().clone();
    let committed: DensityField = serde_json::from_value(last["field"].clone()).unwrap();
    assert_eq!(sel["field_hash"].as_str().unwrap(), grid_hash(committed.grid()));

    let (st, r) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({"steps": 2})), None).await;
    assert_eq!(st, StatusCode::OK, "{r}");
    assert_eq!(r["history_len"], 2);

    let uris = [format!("/sessions/{id}"), format!("/sessions/{id}/topology"), format!("/edits/{edit_id}")];
    let mut before = Vec::new();
    for u in &uris {
        before.push(call(&app, "GET", u, None, None).await);
    }
    let restarted = self::app(&dir);
    for (u, b) in uris.iter().zip(&before) {
        assert_eq!(&call(&restarted, "GET", u, None, None).await, b, "{u}");
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[tokio::test]
async fn mutations_are_idempotent_under_retry() {
    let dir = temp_dir("idem");
    let app = app(&dir);
    let (f, s) = design();
    let body = json!({"field": f, "spec": s});
    let (_, a) = call(&app, "POST", "/sessions", Some(body.clone()), Some("k-1")).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(body.clone()), Some("k-1")).await;
    assert_eq!(a, b);
    let (_, c) = call(&app, "POST", "/sessions", Some(body), Some("k-2")).await;
    assert_ne!(a["session_id"], c["session_id"]);

    let id = a["session_id"].as_str().unwrap();
    let hole = json!({"kind": "nodesign", "hole": {"center": [0.5, 0.5], "radius": 0.1}, "config": small_cfg()});
    let (_, e1) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(hole.clone()), Some("edit-1")).await;
    let (_, e2) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(hole), Some("edit-1")).await;
    assert_eq!(e1["edit_id"], e2["edit_id"]);
    let edit_id = e1["edit_id"].as_str().unwrap();
    wait_done(&app, edit_id).await;

    let sel = json!({"candidate_index": 0});
    let (_, s1) = call(&app, "POST", &format!("/edits/{edit_id}/select"), Some(sel.clone()), Some("sel-1")).await;
    let (_, s2) = call(&app, "POST", &format!("/edits/{edit_id}/select"), Some(sel), Some("sel-1")).await;
    assert_eq!(s1, s2);
    let (_, r1) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({"steps": 1})), Some("ref-1")).await;
    let (_, r2) = call(&app, "POST", &format!("/sessions/{id}/refine"), Some(json!({"steps": 1})), Some("ref-1")).await;
    assert_eq!(r1, r2);
    let (_, sess) = call(&app, "GET", &format!("/sessions/{id}"), None, None).await;
    assert_eq!(sess["history"].as_array().unwrap().len(), 2);
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({})), Some("bad key!")).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_edits_on_one_session_both_complete() {
    let dir = temp_dir("queue");
    let app = app(&dir);
    let id = new_session(&app).await;
    let hole = json!({"kind": "nodesign", "hole": {"center": [0.3, 0.5], "radius": 0.1}, "config": small_cfg()});
    let (_, a) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(hole.clone()), None).await;
    let (_, b) = call(&app, "POST", &format!("/sessions/{id}/edits"), Some(hole), None).await;
    let a = wait_done(&app, a["edit_id"].as_str().unwrap()).await;
    let b = wait_done(&app, b["edit_id"].as_str().unwrap()).await;
    assert_eq!((a["status"].as_str(), b["status"].as_str()), (Some("done"), Some("done")));
    // Same seed, same base design: identical results.
    assert_eq!(a["result"], b["result"]);
}
