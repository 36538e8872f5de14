//! Command-line verbs. Each prints one JSON document on stdout and exits 0,
//! or prints `{"error": {...}}` on stderr and exits nonzero.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ApiError, GatewayConfig, JobRequest, Service};
use crate::acquisition::{simulate_dataset, MaskSpec};
use crate::federated::{run_federation, FederationConfig};
use crate::ledger::{verify_file, Ledger};
use crate::orchestrator::sim::{FleetScenario, FleetSimulator};
use crate::orchestrator::Orchestrator;
use crate::raw_format::encode_dataset;
use crate::recon::{benchmark_local_vs_cloud, Algorithm, BenchNode, ReconParams};
use crate::transport::{seal_for_upload, NonceCounter};

#[derive(Debug, Parser)]
#[command(name = "cloudmri", version, about = "Cloud MRI pipeline service and simulator")]
pub struct Cli {
    /// Overrides the storage directory of the config.
    #[arg(long, global = true)]
    pub storage_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated phantom acquisition as a .cmri container.
    Synth {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seal a container and upload it.
    Upload {
        file: PathBuf,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, default_value = super::config::DEV_KEY_ID)]
        key_id: String,
    },
    /// Submit a reconstruction job and run it to completion.
    Recon {
        dataset_id: String,
        #[arg(long, default_value = "fista")]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        /// 1 means fully sampled.
        #[arg(long, default_value_t = 1.0)]
        accel: f64,
        #[arg(long, default_value_t = 0.08)]
        center_fraction: f64,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        levels: u32,
        #[arg(long, default_value = "tech-01")]
        actor: String,
    },
    /// Show a job record.
    Status { job_id: String },
    /// Fetch an image payload.
    Image {
        image_id: String,
        #[arg(long)]
        actor: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the ledger file; nonzero exit on a broken chain.
    LedgerVerify,
    /// Run a federated training simulation.
    Fedsim {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare reconstruction time across network profiles.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "LOCAL_4G,CLOUD_6G")]
        profiles: Vec<String>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4.0)]
        accel: f64,
        #[arg(long, default_value = "fista")]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Show the node registry, or simulate a fleet scenario when it has jobs.
    Nodes {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the REST API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = ApiError::bad_request("usage", e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return 2;
        }
    };
    match run(cli) {
        Ok(v) => {
            use std::io::Write;
            // a closed pipe (`| head`) is not an error worth a panic
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap());
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

fn config(cli_dir: &Option<PathBuf>) -> Result<GatewayConfig, ApiError> {
    let cfg = GatewayConfig::from_env()?;
    Ok(match cli_dir {
        Some(d) => cfg.with_storage_dir(d),
        None => cfg,
    })
}

fn bad_input(code: &str) -> impl Fn(std::io::Error) -> ApiError + '_ {
    move |e| ApiError::bad_request(code, e.to_string())
}

pub fn run(cli: Cli) -> Result<Value, ApiError> {
    let dir = cli.storage_dir;
    match cli.command {
        Command::Synth { size, noise, seed, out } => {
            let (d, _) = simulate_dataset(size, noise, seed).map_err(|e| ApiError::bad_request("invalid_args", e.to_string()))?;
            let bytes = encode_dataset(&d).map_err(|e| ApiError::internal(e.to_string()))?;
            std::fs::write(&out, &bytes)?;
            Ok(json!({ "path": out, "byte_count": bytes.len(), "sha256": crate::sha256_hex(&bytes) }))
        }
        Command::Upload { file, actor, profile, key_id } => {
            let cfg = config(&dir)?;
            let container = std::fs::read(&file).map_err(bad_input("unreadable_file"))?;
            let profile_name = profile.unwrap_or_else(|| cfg.upload_profile.clone());
            let net = cfg.profile(&profile_name)?;
            let key = cfg.key(&key_id)?;
            let svc = Service::open(cfg)?;
            let nonce = next_nonce(&svc.config().storage_dir)?;
            let (_, blob) = seal_for_upload(&container, &key, &nonce, &net)
                .map_err(|e| ApiError::bad_request("invalid_container", e.to_string()))?;
            let receipt = svc.upload(&actor, &key_id, Some(&profile_name), &blob.to_bytes())?;
            Ok(serde_json::to_value(receipt).unwrap())
        }
        Command::Recon {
            dataset_id,
            algorithm,
            lambda,
            accel,
            center_fraction,
            mask_seed,
            max_iters,
            tol,
            levels,
            actor,
        } => {
            let svc = Service::open(config(&dir)?)?;
            let n = svc_dataset_rows(&svc, &dataset_id)?;
            let mask_spec = if accel <= 1.0 {
                MaskSpec::full(n)
            } else {
                MaskSpec::random_center(n, accel, center_fraction, mask_seed)
            };
            let req = JobRequest {
                dataset_id,
                params: ReconParams {
                    algorithm,
                    lambda,
                    max_iters,
                    tol,
                    wavelet_levels: levels,
                },
                mask_spec: Some(mask_spec),
            };
            let rec = svc.submit_job(&actor, req)?;
            let rec = svc.run_job(&rec.job_id)?;
            if let Some(err) = &rec.error {
                return Err(ApiError::new(500, "recon_failed", err.clone())
                    .with_detail(serde_json::to_value(&rec).unwrap()));
            }
            Ok(serde_json::to_value(rec).unwrap())
        }
        Command::Status { job_id } => {
            let svc = Service::open(config(&dir)?)?;
            Ok(serde_json::to_value(svc.job_status(&job_id)?).unwrap())
        }
        Command::Image { image_id, actor, out } => {
            let svc = Service::open(config(&dir)?)?;
            let bytes = svc.get_image(&actor, &image_id)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &bytes)?;
                    Ok(json!({ "image_id": image_id, "path": path, "byte_count": bytes.len() }))
                }
                None => serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(e.to_string())),
            }
        }
        Command::LedgerVerify => {
            let cfg = config(&dir)?;
            let path = cfg.storage_dir.join("ledger.bin");
            let verdict = verify_file(&path)?;
            let entries = std::fs::read(&path).map(|b| crate::ledger::parse_records(&b).0.len()).unwrap_or(0);
            match verdict.first_bad_index() {
                None => Ok(json!({ "ok": true, "entries": entries })),
                Some(i) => Err(ApiError::new(409, "ledger_tampered", format!("chain breaks at entry {i}"))
                    .with_detail(json!({ "ok": false, "first_bad_index": i }))),
            }
        }
        Command::Fedsim { config: path } => {
            let text = std::fs::read_to_string(&path).map_err(bad_input("unreadable_file"))?;
            let fc: FederationConfig =
                serde_json::from_str(&text).map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
            let mut ledger = Ledger::in_memory();
            let run = run_federation(&fc, Some(&mut ledger), 0)
                .map_err(|e| ApiError::bad_request("federation", e.to_string()))?;
            Ok(json!({
                "rounds": fc.rounds,
                "losses": run.losses,
                "final_version": run.final_params.version,
                "final_params_sha256": hex::encode(run.final_params.digest()),
                "transcript_messages": run.transcript.messages.len(),
                "model_update_entries": ledger.len(),
                "ledger_ok": ledger.verify()?.is_ok(),
            }))
        }
        Command::Bench {
            profiles,
            size,
            accel,
            algorithm,
            max_iters,
            seed,
        } => {
            let cfg = config(&dir)?;
            let nodes = profiles
                .iter()
                .map(|name| bench_node(&cfg, name))
                .collect::<Result<Vec<_>, _>>()?;
            let (d, phantom) = simulate_dataset(size, 0.0, seed).map_err(|e| ApiError::bad_request("invalid_args", e.to_string()))?;
            let spec = if accel <= 1.0 {
                MaskSpec::full(size)
            } else {
                MaskSpec::random_center(size, accel, 0.08, seed)
            };
            let mask = crate::acquisition::make_mask(&spec).map_err(|e| ApiError::bad_request("invalid_args", e.to_string()))?;
            let params = ReconParams {
                max_iters,
                ..ReconParams::with_algorithm(algorithm)
            };
            let rows = benchmark_local_vs_cloud(&d, &mask, &params, &nodes, Some(&phantom))
                .map_err(|e| ApiError::bad_request("bench", e.to_string()))?;
            Ok(json!({ "rows": rows }))
        }
        Command::Nodes { config: path } => {
            let scenario: FleetScenario = match path {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(bad_input("unreadable_file"))?;
                    serde_json::from_str(&text).map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?
                }
                None => {
                    let cfg = config(&dir)?;
                    serde_json::from_value(json!({ "nodes": cfg.fleet, "heartbeat": cfg.heartbeat, "jobs": [] })).unwrap()
                }
            };
            if scenario.jobs.is_empty() {
                let mut o = Orchestrator::new(scenario.heartbeat.clone());
                for n in &scenario.nodes {
                    o.register_node(n.clone(), 0.0)
                        .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
                }
                Ok(json!({ "nodes": o.nodes() }))
            } else {
                let report = FleetSimulator::new(scenario)
                    .run()
                    .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
                Ok(serde_json::to_value(report).unwrap())
            }
        }
        Command::Serve { addr } => {
            let svc = Arc::new(Service::open(config(&dir)?)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(super::http::serve(svc, &addr))?;
            Ok(json!({ "stopped": true }))
        }
    }
}

fn svc_dataset_rows(svc: &Service, dataset_id: &str) -> Result<usize, ApiError> {
    Ok(svc.load_dataset(dataset_id)?.header.matrix_y as usize)
}

/// Bench node for a profile: compute rate from a fleet node on that
/// profile, else the built-in local/cloud pair, else 1 unit/s.
fn bench_node(cfg: &GatewayConfig, profile: &str) -> Result<BenchNode, ApiError> {
    let net = cfg.profile(profile)?;
    let rate = cfg
        .fleet
        .iter()
        .find(|n| n.profile.name == profile)
        .map(|n| n.compute_rate_units_per_s)
        .unwrap_or_else(|| {
            if profile == BenchNode::cloud().profile.name {
                BenchNode::cloud().compute_rate_units_per_s
            } else {
                BenchNode::local().compute_rate_units_per_s
            }
        });
    Ok(BenchNode {
        name: profile.to_lowercase(),
        profile: net,
        compute_rate_units_per_s: rate,
    })
}

#[derive(Serialize, Deserialize)]
struct NonceState {
    #[serde(with = "hex::serde")]
    prefix: [u8; 4],
    next: u64,
}

/// Sender-side nonce, persisted so a key is never reused across runs.
fn next_nonce(storage_dir: &Path) -> Result<[u8; 12], ApiError> {
    let path = storage_dir.join("nonce_counter.json");
    let mut state = match std::fs::read(&path) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| ApiError::internal(format!("nonce_counter.json: {e}")))?,
        Err(_) => NonceState {
            prefix: rand::random(),
            next: 0,
        },
    };
    let nonce = NonceCounter::new(state.prefix, state.next).next_nonce();
    state.next += 1;
    super::store::write_atomic(&path, &serde_json::to_vec(&state).unwrap())?;
    Ok(nonce)
}
