//! The service front door: upload, reconstruction jobs, image retrieval,
//! quality reviews, ledger verification and metrics. [`Service`] holds all
//! state; [`http`] and [`cli`] are thin bindings over it.
//!
//! On-disk layout under `storage_dir`:
//!
//! ```text
//! ledger.bin                  hash chain, append-only
//! objects/{rawdata,image,report}/<sha256>[.meta.json]
//! jobs/<job_id>.json          latest job record
//! review_tokens.json          client token -> review id
//! nonce_counter.json          sender-side nonce state for the CLI
//! ```

pub mod cli;
pub mod config;
pub mod http;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::GatewayConfig;
pub use store::{ObjectKind, ObjectStore};

use crate::acquisition::{generate_phantom, make_mask, Image, MaskSpec, SIM_VENDOR};
use crate::clock::SimClock;
use crate::ledger::{check_access, Action, Effect, Ledger, LedgerEntry, LedgerError, ResourceClass, Verdict};
use crate::monitor::{Event, EventKind, Monitor};
use crate::orchestrator::{Completion, JobState, Orchestrator, ReconJob};
use crate::raw_format::{decode_dataset, RawDataset};
use crate::recon::{compute_units, image_metrics, reconstruct_dataset, ReconParams};
use crate::transport::{estimate_transfer_time, unseal, SealedBlob};

/// Error carried back to HTTP and CLI callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            detail: None,
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(403, "forbidden", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(404, "not_found", format!("{what} {id} not found"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "persistence_failure", message)
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({ "error": self })
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(e.to_string())
    }
}

/// Wall clock for the server, simulated clock for tests.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    Sim(SimClock),
}

impl Clock {
    pub fn now(&self) -> f64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            Clock::Sim(c) => c.now(),
        }
    }

    pub fn now_secs(&self) -> u64 {
        self.now().max(0.0).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadReceipt {
    pub dataset_id: String,
    pub byte_count: u64,
    pub simulated_transfer_s: f64,
    pub profile: String,
    /// False when the same container was already stored.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub params: ReconParams,
    /// Defaults to the full mask of the dataset's matrix.
    #[serde(default)]
    pub mask_spec: Option<MaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    /// Against the regenerated phantom, for simulator datasets only.
    pub nrmse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub compute_units: f64,
    pub simulated_transfer_s: f64,
    pub simulated_compute_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub dataset_id: String,
    pub submitted_by: String,
    pub params: ReconParams,
    pub mask_spec: MaskSpec,
    pub state: JobState,
    pub node: Option<String>,
    pub attempt: u32,
    pub image_id: Option<String>,
    pub metrics: Option<JobMetrics>,
    pub error: Option<String>,
    pub submitted_at: u64,
    pub finished_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub job_id: String,
    pub algorithm: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nrmse: Option<f64>,
}

/// JSON image payload: row-major magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub meta: ImageMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub image_id: String,
    pub score: i64,
    #[serde(default)]
    pub labels: Vec<LabelRect>,
    #[serde(default)]
    pub report: String,
    /// Must match the calling actor when given.
    #[serde(default)]
    pub reviewer: Option<String>,
    /// Resubmitting with the same token returns the first review.
    #[serde(default)]
    pub client_token: Option<String>,
}

/// Stored form of a review; its SHA-256 is the review id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ReviewBody {
    image_id: String,
    reviewer: String,
    score: i64,
    labels: Vec<LabelRect>,
    report: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityReview {
    pub review_id: String,
    pub image_id: String,
    pub reviewer: String,
    pub score: i64,
    pub labels: Vec<LabelRect>,
    pub report: String,
}

struct State {
    ledger: Ledger,
    orch: Orchestrator,
    jobs: BTreeMap<String, JobRecord>,
    review_tokens: BTreeMap<String, String>,
}

pub struct Service {
    cfg: GatewayConfig,
    store: ObjectStore,
    monitor: Arc<Monitor>,
    clock: Clock,
    state: Mutex<State>,
}

fn hash_from_hex(id: &str) -> Option<[u8; 32]> {
    if !store::is_object_id(id) {
        return None;
    }
    hex::decode(id).ok()?.try_into().ok()
}

/// Phantom side length if `d` came from the simulator.
fn simulated_phantom_size(d: &RawDataset) -> Option<usize> {
    if d.header.vendor != SIM_VENDOR {
        return None;
    }
    let rest = d.header.patient_pseudo_id.strip_prefix("phantom-")?;
    let n: usize = rest.split('-').next()?.parse().ok()?;
    (n as u32 == d.header.matrix_x && n as u32 == d.header.matrix_y).then_some(n)
}

impl Service {
    pub fn open(cfg: GatewayConfig) -> Result<Self, ApiError> {
        Self::open_with_clock(cfg, Clock::System)
    }

    pub fn open_with_clock(cfg: GatewayConfig, clock: Clock) -> Result<Self, ApiError> {
        cfg.validate()?;
        let root = &cfg.storage_dir;
        fs::create_dir_all(root.join("jobs"))?;
        let store = ObjectStore::open(&root.join("objects"))?;
        let ledger = Ledger::open(&root.join("ledger.bin")).map_err(|e| match e {
            LedgerError::Corrupt(i) => ApiError::new(500, "ledger_corrupt", e.to_string())
                .with_detail(serde_json::json!({ "first_bad_index": i })),
            other => other.into(),
        })?;
        let monitor = Arc::new(Monitor::new(cfg.monitor.clone()));
        let now = clock.now();
        let mut orch = Orchestrator::new(cfg.heartbeat.clone()).with_monitor(monitor.clone());
        for n in &cfg.fleet {
            orch.register_node(n.clone(), now)
                .map_err(|e| ApiError::bad_request("config", e.to_string()))?;
        }

        let review_tokens = match fs::read(root.join("review_tokens.json")) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| ApiError::internal(format!("review_tokens.json: {e}")))?,
            Err(_) => BTreeMap::new(),
        };

        let svc = Self {
            cfg,
            store,
            monitor,
            clock,
            state: Mutex::new(State {
                ledger,
                orch,
                jobs: BTreeMap::new(),
                review_tokens,
            }),
        };
        svc.load_jobs()?;
        Ok(svc)
    }

    /// Loads persisted jobs. Unfinished ones from an earlier process are
    /// queued again as a new attempt.
    fn load_jobs(&self) -> Result<(), ApiError> {
        let mut st = self.lock();
        let mut paths: Vec<PathBuf> = fs::read_dir(self.jobs_dir())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let mut rec: JobRecord = serde_json::from_slice(&fs::read(&p)?)
                .map_err(|e| ApiError::internal(format!("{}: {e}", p.display())))?;
            if !rec.state.is_terminal() {
                let Ok(job) = self.orchestrator_job(&rec) else {
                    continue;
                };
                rec.state = JobState::Queued;
                rec.node = None;
                rec.attempt += 1;
                st.orch
                    .submit(ReconJob { attempt: rec.attempt, ..job })
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                self.persist_job(&rec)?;
            }
            st.jobs.insert(rec.job_id.clone(), rec);
        }
        Ok(())
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn jobs_dir(&self) -> PathBuf {
        self.cfg.storage_dir.join("jobs")
    }

    fn persist_job(&self, rec: &JobRecord) -> Result<(), ApiError> {
        let path = self.jobs_dir().join(format!("{}.json", rec.job_id));
        store::write_atomic(&path, &serde_json::to_vec_pretty(rec).unwrap())?;
        Ok(())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn store(&self) -> &ObjectStore {
        &self.store
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    fn record(&self, kind: EventKind, source: &str, detail: &str) {
        self.monitor.record_event(Event::new(self.clock.now(), kind, source, detail));
        if kind == EventKind::Deny {
            self.monitor.detect_anomalies(self.clock.now());
        }
    }

    /// Policy check that leaves one ledger entry and maps deny to 403.
    fn authorize(
        &self,
        st: &mut State,
        actor: &str,
        action: Action,
        class: ResourceClass,
        resource: [u8; 32],
    ) -> Result<(), ApiError> {
        let effect = check_access(
            &self.cfg.policy,
            &mut st.ledger,
            actor,
            action,
            class,
            resource,
            self.clock.now_secs(),
        )?;
        if effect == Effect::Deny {
            self.record(EventKind::Deny, actor, &format!("{action} {}", class.as_str()));
            return Err(ApiError::forbidden(format!(
                "{actor} may not {action} {}",
                class.as_str()
            )));
        }
        Ok(())
    }

    /// Accepts a sealed container (`nonce || ciphertext || tag`).
    pub fn upload(&self, actor: &str, key_id: &str, profile: Option<&str>, body: &[u8]) -> Result<UploadReceipt, ApiError> {
        let key = self.cfg.key(key_id)?;
        let profile = self.cfg.profile(profile.unwrap_or(&self.cfg.upload_profile))?;
        let blob = SealedBlob::from_bytes(body).map_err(|e| ApiError::bad_request("unseal_failed", e.to_string()))?;
        let container = unseal(&key, &blob).map_err(|e| ApiError::bad_request("unseal_failed", e.to_string()))?;
        decode_dataset(&container).map_err(|e| ApiError::bad_request("invalid_container", e.to_string()))?;
        let hash = crate::sha256(&container);

        let mut st = self.lock();
        self.authorize(&mut st, actor, Action::Upload, ResourceClass::Rawdata, hash)?;
        let (dataset_id, created) = self
            .store
            .put(ObjectKind::Rawdata, &container, self.clock.now_secs())?;
        drop(st);
        self.record(EventKind::Upload, actor, &dataset_id);
        Ok(UploadReceipt {
            dataset_id,
            byte_count: container.len() as u64,
            simulated_transfer_s: estimate_transfer_time(container.len() as u64, &profile),
            profile: profile.name,
            created,
        })
    }

    fn load_dataset(&self, dataset_id: &str) -> Result<RawDataset, ApiError> {
        let obj = self
            .store
            .get(ObjectKind::Rawdata, dataset_id)?
            .ok_or_else(|| ApiError::not_found("dataset", dataset_id))?;
        decode_dataset(&obj.bytes).map_err(|e| ApiError::internal(format!("stored dataset unreadable: {e}")))
    }

    fn orchestrator_job(&self, rec: &JobRecord) -> Result<ReconJob, ApiError> {
        let obj = self
            .store
            .get(ObjectKind::Rawdata, &rec.dataset_id)?
            .ok_or_else(|| ApiError::not_found("dataset", &rec.dataset_id))?;
        let d = decode_dataset(&obj.bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(ReconJob::new(
            &rec.job_id,
            crate::sha256(&obj.bytes),
            obj.bytes.len() as u64,
            rec.params.clone(),
            d.header.matrix_x,
            d.header.matrix_y,
        ))
    }

    /// Validates and queues a job. Run it with [`Service::run_job`].
    pub fn submit_job(&self, actor: &str, req: JobRequest) -> Result<JobRecord, ApiError> {
        let hash = hash_from_hex(&req.dataset_id).ok_or_else(|| ApiError::not_found("dataset", &req.dataset_id))?;
        let d = self.load_dataset(&req.dataset_id)?;
        req.params
            .validate()
            .map_err(|e| ApiError::bad_request("invalid_params", e.to_string()))?;
        let mask_spec = req
            .mask_spec
            .unwrap_or_else(|| MaskSpec::full(d.header.matrix_y as usize));
        if mask_spec.n != d.header.matrix_y as usize {
            return Err(ApiError::bad_request(
                "invalid_mask",
                format!("mask has {} lines, dataset has {} rows", mask_spec.n, d.header.matrix_y),
            ));
        }
        make_mask(&mask_spec).map_err(|e| ApiError::bad_request("invalid_mask", e.to_string()))?;

        let mut st = self.lock();
        self.authorize(&mut st, actor, Action::Recon, ResourceClass::Rawdata, hash)?;
        let seq = st.jobs.len() + 1;
        let rec = JobRecord {
            job_id: format!("job-{seq:06}"),
            dataset_id: req.dataset_id,
            submitted_by: actor.into(),
            params: req.params,
            mask_spec,
            state: JobState::Queued,
            node: None,
            attempt: 1,
            image_id: None,
            metrics: None,
            error: None,
            submitted_at: self.clock.now_secs(),
            finished_at: None,
        };
        let job = self.orchestrator_job(&rec)?;
        st.orch.submit(job).map_err(|e| ApiError::internal(e.to_string()))?;
        self.persist_job(&rec)?;
        st.jobs.insert(rec.job_id.clone(), rec.clone());
        Ok(rec)
    }

    /// Assigns, executes and commits one queued job on its worker node.
    pub fn run_job(&self, job_id: &str) -> Result<JobRecord, ApiError> {
        let (rec, node) = {
            let mut st = self.lock();
            let now = self.clock.now();
            // in-process workers are alive whenever the service is
            for n in &self.cfg.fleet {
                let _ = st.orch.heartbeat(&n.node_id, now);
            }
            st.orch.detect_failures(now);
            let rec = st
                .jobs
                .get(job_id)
                .cloned()
                .ok_or_else(|| ApiError::not_found("job", job_id))?;
            if rec.state != JobState::Queued {
                return Ok(rec);
            }
            let node_id = st
                .orch
                .assign(job_id)
                .map_err(|e| ApiError::new(503, "no_healthy_node", e.to_string()))?;
            st.orch
                .start(job_id, &node_id, rec.attempt)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            let node = st.orch.node(&node_id).cloned().unwrap();
            let rec = JobRecord {
                state: JobState::Running,
                node: Some(node_id),
                ..rec
            };
            self.persist_job(&rec)?;
            st.jobs.insert(job_id.to_string(), rec.clone());
            (rec, node)
        };

        let outcome = self.execute(&rec, &node);

        let mut st = self.lock();
        let mut rec = rec;
        rec.finished_at = Some(self.clock.now_secs());
        match outcome {
            Ok((payload_bytes, metrics)) => {
                let (image_id, _) = self
                    .store
                    .put(ObjectKind::Image, &payload_bytes, self.clock.now_secs())?;
                let committed = st
                    .orch
                    .complete_job(&Completion {
                        job_id: rec.job_id.clone(),
                        node_id: node.node_id.clone(),
                        attempt: rec.attempt,
                        result_ref: image_id.clone(),
                    })
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                if committed == crate::orchestrator::CompletionOutcome::Committed {
                    st.ledger.append(
                        &node.node_id,
                        Action::Recon,
                        hash_from_hex(&image_id).unwrap(),
                        self.clock.now_secs(),
                    )?;
                    rec.state = JobState::Done;
                    rec.image_id = Some(image_id);
                    rec.metrics = Some(metrics);
                    self.record(EventKind::ReconDone, &node.node_id, &rec.job_id);
                }
            }
            Err(msg) => {
                let _ = st.orch.fail_job(&rec.job_id, &node.node_id, rec.attempt);
                rec.state = JobState::Failed;
                rec.error = Some(msg);
                self.record(EventKind::ReconFail, &node.node_id, &rec.job_id);
            }
        }
        self.persist_job(&rec)?;
        st.jobs.insert(rec.job_id.clone(), rec.clone());
        Ok(rec)
    }

    /// The reconstruction itself; no shared state is touched.
    fn execute(
        &self,
        rec: &JobRecord,
        node: &crate::orchestrator::NodeDescriptor,
    ) -> Result<(Vec<u8>, JobMetrics), String> {
        let d = self.load_dataset(&rec.dataset_id).map_err(|e| e.message)?;
        let mask = make_mask(&rec.mask_spec).map_err(|e| e.to_string())?;
        let out = reconstruct_dataset(&d, &mask, &rec.params).map_err(|e| e.to_string())?;

        let truth: Option<Image> = simulated_phantom_size(&d).and_then(|n| generate_phantom(n).ok());
        let quality = match &truth {
            Some(t) => Some(image_metrics(&out.image, t).map_err(|e| e.to_string())?),
            None => None,
        };
        let bytes = encode_len(&d);
        let units = compute_units(&rec.params, d.header.matrix_x, d.header.matrix_y);
        let metrics = JobMetrics {
            nrmse: quality.map(|q| q.nrmse),
            psnr_db: quality.map(|q| q.psnr_db).filter(|p| p.is_finite()),
            iterations: out.per_coil.iter().map(|r| r.iterations_used).max().unwrap_or(0),
            wall_seconds: out.per_coil.iter().map(|r| r.wall_seconds).sum(),
            compute_units: units,
            simulated_transfer_s: estimate_transfer_time(bytes, &node.profile),
            simulated_compute_s: units / node.compute_rate_units_per_s,
        };
        let payload = ImagePayload {
            width: out.image.width,
            height: out.image.height,
            pixels: out.image.pixels,
            meta: ImageMeta {
                job_id: rec.job_id.clone(),
                algorithm: rec.params.algorithm.name().into(),
                nrmse: metrics.nrmse,
            },
        };
        Ok((serde_json::to_vec(&payload).map_err(|e| e.to_string())?, metrics))
    }

    /// Ids of queued jobs, e.g. ones resumed from an earlier process.
    pub fn queued_jobs(&self) -> Vec<String> {
        self.lock()
            .jobs
            .values()
            .filter(|j| j.state == JobState::Queued)
            .map(|j| j.job_id.clone())
            .collect()
    }

    pub fn job_status(&self, job_id: &str) -> Result<JobRecord, ApiError> {
        self.lock()
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("job", job_id))
    }

    pub fn list_jobs(&self) -> Vec<JobRecord> {
        self.lock().jobs.values().cloned().collect()
    }

    /// Raw JSON bytes of the stored [`ImagePayload`].
    pub fn get_image(&self, actor: &str, image_id: &str) -> Result<Vec<u8>, ApiError> {
        let hash = hash_from_hex(image_id).ok_or_else(|| ApiError::not_found("image", image_id))?;
        let obj = self
            .store
            .get(ObjectKind::Image, image_id)?
            .ok_or_else(|| ApiError::not_found("image", image_id))?;
        let mut st = self.lock();
        self.authorize(&mut st, actor, Action::Access, ResourceClass::Image, hash)?;
        Ok(obj.bytes)
    }

    fn image_dims(&self, image_id: &str) -> Result<(usize, usize), ApiError> {
        let obj = self
            .store
            .get(ObjectKind::Image, image_id)?
            .ok_or_else(|| ApiError::not_found("image", image_id))?;
        let p: ImagePayload = serde_json::from_slice(&obj.bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok((p.width, p.height))
    }

    pub fn submit_review(&self, actor: &str, req: ReviewRequest) -> Result<QualityReview, ApiError> {
        if let Some(token) = &req.client_token {
            let existing = self.lock().review_tokens.get(token).cloned();
            if let Some(id) = existing {
                return self.get_review(&id);
            }
        }
        if !(1..=5).contains(&req.score) {
            return Err(ApiError::bad_request("invalid_review", format!("score {} outside 1..5", req.score)));
        }
        if req.reviewer.as_deref().is_some_and(|r| r != actor) {
            return Err(ApiError::bad_request("invalid_review", "reviewer must be the calling actor"));
        }
        let (w, h) = self.image_dims(&req.image_id)?;
        for (i, l) in req.labels.iter().enumerate() {
            let inside = l.x >= 0 && l.y >= 0 && l.w >= 1 && l.h >= 1 && l.x + l.w <= w as i64 && l.y + l.h <= h as i64;
            if !inside {
                return Err(ApiError::bad_request(
                    "invalid_review",
                    format!("label {i} ({},{} {}x{}) outside the {w}x{h} image", l.x, l.y, l.w, l.h),
                ));
            }
        }
        let body = ReviewBody {
            image_id: req.image_id,
            reviewer: actor.into(),
            score: req.score,
            labels: req.labels,
            report: req.report,
        };
        let bytes = serde_json::to_vec(&body).unwrap();
        let hash = crate::sha256(&bytes);

        let mut st = self.lock();
        if let Some(id) = req.client_token.as_ref().and_then(|t| st.review_tokens.get(t)) {
            let id = id.clone();
            drop(st);
            return self.get_review(&id);
        }
        self.authorize(&mut st, actor, Action::Review, ResourceClass::Report, hash)?;
        let (review_id, _) = self.store.put(ObjectKind::Report, &bytes, self.clock.now_secs())?;
        if let Some(token) = req.client_token {
            st.review_tokens.insert(token, review_id.clone());
            store::write_atomic(
                &self.cfg.storage_dir.join("review_tokens.json"),
                &serde_json::to_vec_pretty(&st.review_tokens).unwrap(),
            )?;
        }
        drop(st);
        self.record(EventKind::Review, actor, &review_id);
        Ok(QualityReview {
            review_id,
            image_id: body.image_id,
            reviewer: body.reviewer,
            score: body.score,
            labels: body.labels,
            report: body.report,
        })
    }

    pub fn get_review(&self, review_id: &str) -> Result<QualityReview, ApiError> {
        let obj = self
            .store
            .get(ObjectKind::Report, review_id)?
            .ok_or_else(|| ApiError::not_found("review", review_id))?;
        let b: ReviewBody = serde_json::from_slice(&obj.bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(QualityReview {
            review_id: review_id.into(),
            image_id: b.image_id,
            reviewer: b.reviewer,
            score: b.score,
            labels: b.labels,
            report: b.report,
        })
    }

    /// Verifies the chain as persisted on disk.
    pub fn ledger_verify(&self) -> Result<Verdict, ApiError> {
        Ok(self.lock().ledger.verify()?)
    }

    pub fn ledger_entries(&self) -> Vec<LedgerEntry> {
        self.lock().ledger.entries().to_vec()
    }

    /// Flat counters: events, alerts, jobs by state, ledger size.
    pub fn metrics(&self) -> BTreeMap<String, u64> {
        self.monitor.detect_anomalies(self.clock.now());
        let st = self.lock();
        let mut by_state: BTreeMap<JobState, u64> = JobState::ALL.iter().map(|s| (*s, 0)).collect();
        for j in st.jobs.values() {
            *by_state.entry(j.state).or_default() += 1;
        }
        for (s, n) in by_state {
            self.monitor.set_gauge(s.counter_name(), n);
        }
        self.monitor.set_gauge("ledger_entries", st.ledger.len() as u64);
        drop(st);
        self.monitor.metrics_snapshot()
    }

    /// Object ids named by UPLOAD, RECON and REVIEW ledger entries.
    pub fn replay_object_ids(&self) -> BTreeSet<String> {
        self.lock()
            .ledger
            .entries()
            .iter()
            .filter(|e| matches!(e.action, Action::Upload | Action::Recon | Action::Review))
            .map(|e| hex::encode(e.resource_hash))
            .collect()
    }

    pub fn stored_object_ids(&self) -> Result<BTreeSet<String>, ApiError> {
        let mut out = BTreeSet::new();
        for k in ObjectKind::ALL {
            out.extend(self.store.list(k)?);
        }
        Ok(out)
    }
}

fn encode_len(d: &RawDataset) -> u64 {
    crate::raw_format::encode_dataset(d).map_or(0, |b| b.len() as u64)
}
