use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use cloudmri::transport::{estimate_transfer_time, NetworkProfile};
use cloudmri::recon::TEN_GB;
use serde_json::{json, Value};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudmri"))
        .env_remove("CLOUDMRI_CONFIG")
        .arg("--storage-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn upload_recon_status_reaches_done() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("scan.cmri");
    let synth = ok_json(&cli(dir.path(), &["synth", "--size", "32", "--out", file.to_str().unwrap()]));

    let up = ok_json(&cli(
        dir.path(),
        &["upload", file.to_str().unwrap(), "--actor", "tech-01", "--profile", "LOCAL_4G"],
    ));
    let dataset_id = up["dataset_id"].as_str().unwrap();
    assert_eq!(dataset_id, synth["sha256"].as_str().unwrap());
    assert_eq!(up["profile"], "LOCAL_4G");

    let job = ok_json(&cli(
        dir.path(),
        &["recon", dataset_id, "--algorithm", "fista", "--lambda", "0.01", "--accel", "2"],
    ));
    let job_id = job["job_id"].as_str().unwrap();

    let status = ok_json(&cli(dir.path(), &["status", job_id]));
    assert_eq!(status["state"], "DONE");
    assert_eq!(status["image_id"], job["image_id"]);
    assert!(status["metrics"]["nrmse"].as_f64().unwrap() < 0.5);

    let image = ok_json(&cli(dir.path(), &["image", status["image_id"].as_str().unwrap(), "--actor", "rad-01"]));
    assert_eq!(image["pixels"].as_array().unwrap().len(), 32 * 32);

    let verify = ok_json(&cli(dir.path(), &["ledger-verify"]));
    assert_eq!(verify["ok"], true);
    assert!(started.elapsed().as_secs() < 30);
}

#[test]
fn failures_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let e = err_json(&cli(dir.path(), &["status", "job-000042"]));
    assert_eq!(e["error"]["status"], 404);

    let e = err_json(&cli(dir.path(), &["recon", &"a".repeat(64)]));
    assert_eq!(e["error"]["code"], "not_found");

    let e = err_json(&cli(dir.path(), &["upload", "/nonexistent.cmri", "--actor", "tech-01"]));
    assert_eq!(e["error"]["code"], "unreadable_file");

    let out = cli(dir.path(), &["no-such-verb"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(err_json(&out)["error"]["code"], "usage");

    // an unauthorized upload is refused
    let file = dir.path().join("s.cmri");
    ok_json(&cli(dir.path(), &["synth", "--size", "8", "--out", file.to_str().unwrap()]));
    let e = err_json(&cli(dir.path(), &["upload", file.to_str().unwrap(), "--actor", "mallory"]));
    assert_eq!(e["error"]["status"], 403);
}

#[test]
fn ledger_verify_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.cmri");
    ok_json(&cli(dir.path(), &["synth", "--size", "8", "--out", file.to_str().unwrap()]));
    for actor in ["tech-01", "mallory", "tech-01"] {
        let _ = cli(dir.path(), &["upload", file.to_str().unwrap(), "--actor", actor]);
    }
    assert_eq!(ok_json(&cli(dir.path(), &["ledger-verify"]))["entries"], 3);

    let ledger = dir.path().join("ledger.bin");
    let mut bytes = std::fs::read(&ledger).unwrap();
    let n = bytes.len();
    bytes[n - 40] ^= 0x10; // inside the last record
    std::fs::write(&ledger, bytes).unwrap();

    let out = cli(dir.path(), &["ledger-verify"]);
    let e = err_json(&out);
    assert_eq!(e["error"]["code"], "ledger_tampered");
    assert_eq!(e["error"]["detail"], json!({"ok": false, "first_bad_index": 2}));
}

#[test]
fn bench_surfaces_ten_gigabyte_transfer_times() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&cli(
        dir.path(),
        &["bench", "--profiles", "LOCAL_4G,CLOUD_6G", "--size", "16", "--max-iters", "5"],
    ));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let local = rows[0]["transfer_10gb_s"].as_f64().unwrap();
    let cloud = rows[1]["transfer_10gb_s"].as_f64().unwrap();
    assert_eq!(local, estimate_transfer_time(TEN_GB, &NetworkProfile::local_4g()));
    assert!((local - 816.0).abs() <= 0.5);
    assert_eq!(cloud, 0.01);
    assert_eq!(rows[0]["nrmse"], rows[1]["nrmse"]);
}

#[test]
fn fedsim_and_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let fed = dir.path().join("fed.json");
    std::fs::write(
        &fed,
        json!({
            "hospitals": [
                {"hospital_id": "h1", "n_samples": 20, "seed": 1},
                {"hospital_id": "h2", "n_samples": 35, "seed": 2}
            ],
            "epochs": 1, "learning_rate": 0.05, "rounds": 5, "model_dim": 8
        })
        .to_string(),
    )
    .unwrap();
    let v = ok_json(&cli(dir.path(), &["fedsim", "--config", fed.to_str().unwrap()]));
    let losses: Vec<f64> = serde_json::from_value(v["losses"].clone()).unwrap();
    assert_eq!(losses.len(), 6);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(v["model_update_entries"], 5);
    assert_eq!(v["ledger_ok"], true);

    let v = ok_json(&cli(dir.path(), &["nodes"]));
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);

    let fleet = dir.path().join("fleet.json");
    std::fs::write(
        &fleet,
        json!({
            "nodes": [
                {"node_id": "a", "kind": "cloud", "compute_rate_units_per_s": 10.0,
                 "profile": {"name": "p", "rate_bits_per_s": 1e9, "latency_s": 0.01, "per_file_overhead_s": 0.0}},
                {"node_id": "b", "kind": "edge", "compute_rate_units_per_s": 1.0,
                 "profile": {"name": "p", "rate_bits_per_s": 1e9, "latency_s": 0.01, "per_file_overhead_s": 0.0}}
            ],
            "jobs": [{"job_id": "j1", "submit_at": 0.0, "byte_count": 1000, "compute_units": 300.0}],
            "crashes": [{"node_id": "a", "at": 3.0}]
        })
        .to_string(),
    )
    .unwrap();
    let v = ok_json(&cli(dir.path(), &["nodes", "--config", fleet.to_str().unwrap()]));
    assert_eq!(v["jobs"][0]["state"], "DONE");
    assert_eq!(v["jobs"][0]["node"], "b");
    assert_eq!(v["failed_nodes"][0][0], "a");
}
