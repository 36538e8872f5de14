//! Drives the REST API in-process: upload, reconstruct, fetch the image,
//! review it and check the ledger. Pass `serve` to listen on 127.0.0.1:8080
//! instead.
//!
//!     cargo run --example gateway_end_to_end [-- serve]

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use cloudmri::acquisition::simulate_dataset;
use cloudmri::gateway::config::{DEV_KEY_HEX, DEV_KEY_ID};
use cloudmri::gateway::{http, GatewayConfig, Service};
use cloudmri::raw_format::encode_dataset;
use cloudmri::transport::seal;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, req: Request<Body>) -> Result<Value, Box<dyn std::error::Error>> {
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let body = resp.into_body().collect().await?.to_bytes();
    let v: Value = serde_json::from_slice(&body)?;
    println!("{status} {}", truncate(&v.to_string()));
    Ok(v)
}

fn truncate(s: &str) -> String {
    if s.len() > 140 { format!("{}...", &s[..140]) } else { s.to_string() }
}

fn post(uri: &str, actor: &str, body: Value) -> Request<Body> {
    Request::post(uri).header("x-actor-id", actor).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

fn get(uri: &str, actor: &str) -> Request<Body> {
    Request::get(uri).header("x-actor-id", actor).body(Body::empty()).unwrap()
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("cloudmri-gateway-{}", std::process::id()));
    let svc = Arc::new(Service::open(GatewayConfig::default().with_storage_dir(&dir))?);
    if std::env::args().nth(1).as_deref() == Some("serve") {
        println!("storage in {}", dir.display());
        return Ok(http::serve(svc, "127.0.0.1:8080").await?);
    }
    let app = http::router(svc);

    let (d, _) = simulate_dataset(64, 0.005, 11)?;
    let container = encode_dataset(&d)?;
    let sealed = seal(&hex::decode(DEV_KEY_HEX)?, &container, &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1])?.to_bytes();
    let upload = Request::post("/v1/datasets")
        .header("x-actor-id", "tech-01")
        .header("x-key-id", DEV_KEY_ID)
        .header("x-profile", "CLOUD_6G")
        .body(Body::from(sealed))?;
    let up = call(&app, upload).await?;
    let dataset_id = up["dataset_id"].as_str().ok_or("no dataset id")?;

    let job = call(
        &app,
        post(
            "/v1/jobs",
            "tech-01",
            json!({"dataset_id": dataset_id, "params": {"algorithm": "fista", "lambda": 0.01, "max_iters": 150},
                   "mask_spec": {"n": 64, "pattern": "random_lines_center", "acceleration": 4.0, "center_fraction": 0.08, "seed": 42}}),
        ),
    )
    .await?;
    let job_id = job["job_id"].as_str().ok_or("no job id")?.to_string();

    let status = loop {
        let s = call(&app, get(&format!("/v1/jobs/{job_id}"), "tech-01")).await?;
        if s["state"] == "DONE" || s["state"] == "FAILED" {
            break s;
        }
        tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    };
    let image_id = status["image_id"].as_str().ok_or("job produced no image")?;

    call(&app, get(&format!("/v1/images/{image_id}"), "rad-01")).await?;
    call(&app, get(&format!("/v1/images/{image_id}"), "visitor")).await?;
    call(
        &app,
        post("/v1/reviews", "rad-01", json!({"image_id": image_id, "score": 4, "report": "No acute findings.",
            "labels": [{"x": 20, "y": 18, "w": 10, "h": 12, "text": "ventricle"}]})),
    )
    .await?;
    call(&app, get("/v1/ledger/verify", "rad-01")).await?;
    call(&app, get("/v1/metrics", "rad-01")).await?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
