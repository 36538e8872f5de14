mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cloudmri::acquisition::{simulate_dataset, MaskSpec};
use cloudmri::clock::SimClock;
use cloudmri::gateway::config::{DEV_KEY_HEX, DEV_KEY_ID};
use cloudmri::gateway::http::router;
use cloudmri::gateway::{Clock, GatewayConfig, ImagePayload, Service};
use cloudmri::ledger::Action;
use cloudmri::raw_format::encode_dataset;
use cloudmri::recon::{reconstruct_dataset, Algorithm, ReconParams};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    _dir: tempfile::TempDir,
    svc: Arc<Service>,
    app: Router,
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GatewayConfig::default().with_storage_dir(dir.path());
    let svc = Arc::new(Service::open_with_clock(cfg, Clock::Sim(SimClock::starting_at(1_000.0))).unwrap());
    Harness {
        app: router(svc.clone()),
        svc,
        _dir: dir,
    }
}

fn dev_key() -> Vec<u8> {
    hex::decode(DEV_KEY_HEX).unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn upload_req(actor: &str, body: Vec<u8>) -> Request<Body> {
    Request::post("/v1/datasets")
        .header("x-actor-id", actor)
        .header("x-key-id", DEV_KEY_ID)
        .body(Body::from(body))
        .unwrap()
}

fn json_post(uri: &str, actor: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header("x-actor-id", actor)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str, actor: Option<&str>) -> Request<Body> {
    let mut b = Request::get(uri);
    if let Some(a) = actor {
        b = b.header("x-actor-id", a);
    }
    b.body(Body::empty()).unwrap()
}

async fn upload_phantom(app: &Router, n: usize, counter: u8) -> (Vec<u8>, String) {
    let (d, _) = simulate_dataset(n, 0.0, 3).unwrap();
    let container = encode_dataset(&d).unwrap();
    let (status, v) = call(app, upload_req("tech-01", common::sealed(&container, &dev_key(), counter))).await;
    assert!(status.is_success(), "{status} {v}");
    (container, v["dataset_id"].as_str().unwrap().to_string())
}

async fn wait_done(app: &Router, job_id: &str) -> Value {
    for _ in 0..2000 {
        let (status, v) = call(app, get(&format!("/v1/jobs/{job_id}"), None)).await;
        assert_eq!(status, StatusCode::OK);
        if v["state"] == "DONE" || v["state"] == "FAILED" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {job_id} did not finish");
}

async fn run_job(app: &Router, body: Value) -> Value {
    let (status, v) = call(app, json_post("/v1/jobs", "tech-01", body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    wait_done(app, v["job_id"].as_str().unwrap()).await
}

#[tokio::test]
async fn upload_is_content_addressed_and_idempotent() {
    let h = harness();
    let (container, id) = upload_phantom(&h.app, 16, 1).await;
    assert_eq!(id, cloudmri::sha256_hex(&container));

    let (status, v) = call(&h.app, upload_req("tech-01", common::sealed(&container, &dev_key(), 2))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["dataset_id"], id.as_str());
    assert_eq!(v["created"], false);
    assert_eq!(h.svc.store().list(cloudmri::gateway::ObjectKind::Rawdata).unwrap().len(), 1);
}

#[tokio::test]
async fn upload_rejections() {
    let h = harness();
    let (d, _) = simulate_dataset(8, 0.0, 1).unwrap();
    let container = encode_dataset(&d).unwrap();

    let (status, v) = call(&h.app, upload_req("mallory", common::sealed(&container, &dev_key(), 1))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(v["error"]["code"], "forbidden");
    let last = h.svc.ledger_entries().last().cloned().unwrap();
    assert_eq!(last.action, Action::Deny);
    assert_eq!(last.actor_id, "mallory");

    // wrong key
    let (status, _) = call(&h.app, upload_req("tech-01", common::sealed(&container, &[9u8; 32], 1))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    // sealed garbage
    let (status, v) = call(&h.app, upload_req("tech-01", common::sealed(b"not a container", &dev_key(), 1))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_container");
    // tampered ciphertext
    let mut blob = common::sealed(&container, &dev_key(), 1);
    blob[20] ^= 1;
    let (status, _) = call(&h.app, upload_req("tech-01", blob)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    // missing key header
    let req = Request::post("/v1/datasets")
        .header("x-actor-id", "tech-01")
        .body(Body::from(vec![0u8; 40]))
        .unwrap();
    assert_eq!(call(&h.app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn zero_filled_full_mask_is_exact() {
    let h = harness();
    let (_, id) = upload_phantom(&h.app, 32, 1).await;
    let job = run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "zero_filled"}})).await;
    assert_eq!(job["state"], "DONE", "{job}");
    assert!(job["metrics"]["nrmse"].as_f64().unwrap() <= 1e-6);
    assert_eq!(job["attempt"], 1);
}

#[tokio::test]
async fn fista_beats_zero_filled_at_r4() {
    let h = harness();
    let (_, id) = upload_phantom(&h.app, 64, 1).await;
    let mask = MaskSpec::random_center(64, 4.0, 0.08, 42);
    let zf = run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "zero_filled"}, "mask_spec": mask})).await;
    let cs = run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "fista"}, "mask_spec": mask})).await;
    let (zf, cs) = (zf["metrics"]["nrmse"].as_f64().unwrap(), cs["metrics"]["nrmse"].as_f64().unwrap());
    assert!(cs < zf, "fista {cs} vs zero-filled {zf}");
}

#[tokio::test]
async fn job_errors() {
    let h = harness();
    let missing = "0".repeat(64);
    let (status, _) = call(&h.app, json_post("/v1/jobs", "tech-01", json!({"dataset_id": missing}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, id) = upload_phantom(&h.app, 16, 1).await;
    let (status, _) = call(
        &h.app,
        json_post("/v1/jobs", "tech-01", json!({"dataset_id": id, "params": {"max_iters": 0}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &h.app,
        json_post("/v1/jobs", "tech-01", json!({"dataset_id": id, "mask_spec": MaskSpec::full(8)})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, get("/v1/jobs/job-999999", None)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn image_payload_matches_reconstruction() {
    let h = harness();
    let (container, id) = upload_phantom(&h.app, 32, 1).await;
    let mask = MaskSpec::random_center(32, 2.0, 0.08, 5);
    let params = ReconParams {
        max_iters: 30,
        ..ReconParams::with_algorithm(Algorithm::Ista)
    };
    let job = run_job(&h.app, json!({"dataset_id": id, "params": params, "mask_spec": mask})).await;
    let image_id = job["image_id"].as_str().unwrap();

    let resp = h.app.clone().oneshot(get(&format!("/v1/images/{image_id}"), Some("rad-01"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(cloudmri::sha256_hex(&bytes), image_id);
    let payload: ImagePayload = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(payload.pixels.len(), payload.width * payload.height);
    assert_eq!(payload.meta.algorithm, "ista");

    let d = cloudmri::raw_format::decode_dataset(&container).unwrap();
    let m = cloudmri::acquisition::make_mask(&mask).unwrap();
    let expected = reconstruct_dataset(&d, &m, &params).unwrap().image;
    let same_bits = payload
        .pixels
        .iter()
        .zip(&expected.pixels)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same_bits);

    // denied viewer
    let (status, _) = call(&h.app, get(&format!("/v1/images/{image_id}"), Some("mallory"))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (_, entries) = call(&h.app, get("/v1/ledger/entries", None)).await;
    let last = entries.as_array().unwrap().last().unwrap();
    assert_eq!(last["action"], "DENY");
    assert_eq!(last["resource_hash"], image_id);
    assert_eq!(call(&h.app, get(&format!("/v1/images/{}", "f".repeat(64)), Some("rad-01"))).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reviews_validate_round_trip_and_dedupe() {
    let h = harness();
    let (_, id) = upload_phantom(&h.app, 16, 1).await;
    let job = run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "zero_filled"}})).await;
    let image_id = job["image_id"].as_str().unwrap().to_string();

    let review = |score: i64, x: i64, token: Option<&str>| {
        json!({
            "image_id": image_id,
            "score": score,
            "labels": [{"x": x, "y": 2, "w": 4, "h": 3, "text": "lesion?"}],
            "report": "no acute findings",
            "client_token": token,
        })
    };
    assert_eq!(call(&h.app, json_post("/v1/reviews", "rad-01", review(6, 0, None))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, json_post("/v1/reviews", "rad-01", review(0, 0, None))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, json_post("/v1/reviews", "rad-01", review(3, 13, None))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, json_post("/v1/reviews", "tech-01", review(3, 0, None))).await.0, StatusCode::FORBIDDEN);

    let (status, created) = call(&h.app, json_post("/v1/reviews", "rad-01", review(4, 12, Some("t-1")))).await;
    assert_eq!(status, StatusCode::CREATED);
    let rid = created["review_id"].as_str().unwrap();
    let (status, fetched) = call(&h.app, get(&format!("/v1/reviews/{rid}"), None)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, created);
    assert_eq!(fetched["labels"][0], json!({"x": 12, "y": 2, "w": 4, "h": 3, "text": "lesion?"}));
    assert_eq!(fetched["reviewer"], "rad-01");

    // same token, even with a different body, returns the first review
    let before = h.svc.ledger_entries().len();
    let (_, again) = call(&h.app, json_post("/v1/reviews", "rad-01", review(2, 0, Some("t-1")))).await;
    assert_eq!(again["review_id"], rid);
    assert_eq!(h.svc.ledger_entries().len(), before);
    assert_eq!(h.svc.store().list(cloudmri::gateway::ObjectKind::Report).unwrap().len(), 1);
}

#[tokio::test]
async fn every_state_change_is_ledgered_and_chain_verifies() {
    let h = harness();
    let mut last = h.svc.ledger_entries().len();
    let mut grew = |svc: &Service| {
        let n = svc.ledger_entries().len();
        let ok = n > last;
        last = n;
        ok
    };
    let (_, id) = upload_phantom(&h.app, 16, 1).await;
    assert!(grew(&h.svc));
    let job = run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "fista", "max_iters": 10}})).await;
    assert!(grew(&h.svc));
    let image_id = job["image_id"].as_str().unwrap();
    call(&h.app, get(&format!("/v1/images/{image_id}"), Some("rad-01"))).await;
    assert!(grew(&h.svc));
    let (s, _) = call(&h.app, json_post("/v1/reviews", "rad-01", json!({"image_id": image_id, "score": 5}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(grew(&h.svc));

    let (status, v) = call(&h.app, get("/v1/ledger/verify", None)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"ok": true}));

    // replaying the ledger names exactly the stored objects
    assert_eq!(h.svc.replay_object_ids(), h.svc.stored_object_ids().unwrap());
    assert!(h.svc.store().audit().unwrap().is_empty());
}

#[tokio::test]
async fn metrics_are_flat_counters() {
    let h = harness();
    let (_, id) = upload_phantom(&h.app, 16, 1).await;
    run_job(&h.app, json!({"dataset_id": id, "params": {"algorithm": "zero_filled"}})).await;
    for _ in 0..3 {
        call(&h.app, upload_req("mallory", vec![0u8; 64])).await;
    }
    let (d, _) = simulate_dataset(8, 0.0, 1).unwrap();
    let c = encode_dataset(&d).unwrap();
    for i in 0..3 {
        call(&h.app, upload_req("mallory", common::sealed(&c, &dev_key(), i))).await;
    }
    let (status, m) = call(&h.app, get("/v1/metrics", None)).await;
    assert_eq!(status, StatusCode::OK);
    let m = m.as_object().unwrap();
    assert!(m.values().all(|v| v.is_u64()));
    assert_eq!(m["events_upload"], 1);
    assert_eq!(m["events_deny"], 3);
    assert_eq!(m["jobs_done"], 1);
    assert_eq!(m["events_recon_done"], 1);
    assert_eq!(m["alerts_unauthorized_access_burst"], 1);
}

#[tokio::test]
async fn unfinished_jobs_resume_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GatewayConfig::default().with_storage_dir(dir.path());
    let job_id = {
        let svc = Service::open(cfg.clone()).unwrap();
        let (d, _) = simulate_dataset(16, 0.0, 1).unwrap();
        let c = encode_dataset(&d).unwrap();
        let r = svc.upload("tech-01", DEV_KEY_ID, None, &common::sealed(&c, &dev_key(), 1)).unwrap();
        let req = serde_json::from_value(json!({"dataset_id": r.dataset_id})).unwrap();
        svc.submit_job("tech-01", req).unwrap().job_id
    };
    let svc = Service::open(cfg).unwrap();
    assert_eq!(svc.queued_jobs(), vec![job_id.clone()]);
    let rec = svc.run_job(&job_id).unwrap();
    assert_eq!(rec.state, cloudmri::orchestrator::JobState::Done);
    assert_eq!(rec.attempt, 2);
    assert!(svc.ledger_verify().unwrap().is_ok());
}
