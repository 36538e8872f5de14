//! Cloud/edge node registry, cost-based assignment and the job state machine.
//!
//! A job moves `QUEUED -> ASSIGNED -> RUNNING -> DONE | FAILED`. When its node
//! stops heart-beating the job returns to `QUEUED` with `attempt + 1`.
//! Completions carry the attempt they belong to; the first matching one
//! commits and every other is acknowledged and dropped, giving at-least-once
//! execution with exactly-once commitment.
//!
//! All mutation goes through `&mut Orchestrator`; share it behind a mutex.

pub mod sim;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::{Event, EventKind, Monitor};
use crate::recon::{compute_units, ReconParams};
use crate::transport::{estimate_transfer_time, NetworkProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("node id {0:?} already registered")]
    DuplicateNodeId(String),
    #[error("invalid node: {0}")]
    InvalidNode(String),
    #[error("no healthy node available")]
    NoHealthyNode,
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("job id {0:?} already submitted")]
    DuplicateJobId(String),
    #[error("illegal transition for job {job_id}: {from:?} -> {to:?}")]
    IllegalTransition {
        job_id: String,
        from: JobState,
        to: JobState,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Cloud,
    Edge,
}

/// Fleet config entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub kind: NodeKind,
    pub compute_rate_units_per_s: f64,
    pub profile: NetworkProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub kind: NodeKind,
    pub compute_rate_units_per_s: f64,
    /// Path from the hospital to this node.
    pub profile: NetworkProfile,
    pub healthy: bool,
    /// Estimated compute seconds of the node's non-terminal jobs.
    pub backlog_s: f64,
    pub last_heartbeat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Assigned,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub const ALL: [JobState; 5] = [
        JobState::Queued,
        JobState::Assigned,
        JobState::Running,
        JobState::Done,
        JobState::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    pub fn counter_name(self) -> &'static str {
        match self {
            JobState::Queued => "jobs_queued",
            JobState::Assigned => "jobs_assigned",
            JobState::Running => "jobs_running",
            JobState::Done => "jobs_done",
            JobState::Failed => "jobs_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconJob {
    pub job_id: String,
    #[serde(with = "hex::serde")]
    pub dataset_hash: [u8; 32],
    pub byte_count: u64,
    pub params: ReconParams,
    pub compute_units: f64,
    pub state: JobState,
    pub assigned_node: Option<String>,
    pub attempt: u32,
    pub result_ref: Option<String>,
}

impl ReconJob {
    /// New `QUEUED` job, attempt 1, with work estimated from the matrix size.
    pub fn new(
        job_id: impl Into<String>,
        dataset_hash: [u8; 32],
        byte_count: u64,
        params: ReconParams,
        matrix_x: u32,
        matrix_y: u32,
    ) -> Self {
        let compute_units = compute_units(&params, matrix_x, matrix_y);
        Self {
            job_id: job_id.into(),
            dataset_hash,
            byte_count,
            params,
            compute_units,
            state: JobState::Queued,
            assigned_node: None,
            attempt: 1,
            result_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeartbeatConfig {
    pub interval_s: f64,
    pub missed_beats: u32,
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self {
            interval_s: 5.0,
            missed_beats: 3,
        }
    }
}

impl HeartbeatConfig {
    pub fn timeout_s(&self) -> f64 {
        self.interval_s * f64::from(self.missed_beats)
    }
}

/// Assignment cost of `job` on `node`: transfer + backlog + compute seconds.
pub fn assignment_cost(job: &ReconJob, node: &NodeDescriptor) -> f64 {
    estimate_transfer_time(job.byte_count, &node.profile)
        + node.backlog_s
        + job.compute_units / node.compute_rate_units_per_s
}

/// Healthy node of minimum cost; ties go to the smallest node id.
pub fn choose_node<'a>(
    job: &ReconJob,
    nodes: impl IntoIterator<Item = &'a NodeDescriptor>,
) -> Option<&'a NodeDescriptor> {
    nodes
        .into_iter()
        .filter(|n| n.healthy)
        .map(|n| (assignment_cost(job, n), n))
        .min_by(|(ca, a), (cb, b)| ca.total_cmp(cb).then_with(|| a.node_id.cmp(&b.node_id)))
        .map(|(_, n)| n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub job_id: String,
    pub node_id: String,
    pub attempt: u32,
    pub result_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompletionOutcome {
    Committed,
    /// Acknowledged but ignored: stale attempt, wrong node or already terminal.
    Discarded(String),
}

#[derive(Debug, Clone)]
struct JobEntry {
    job: ReconJob,
    /// Compute seconds charged to the assigned node's backlog.
    charged_s: f64,
}

#[derive(Debug, Default)]
pub struct Orchestrator {
    heartbeat: HeartbeatConfig,
    nodes: BTreeMap<String, NodeDescriptor>,
    jobs: BTreeMap<String, JobEntry>,
    monitor: Option<Arc<Monitor>>,
    done_transitions: u64,
}

impl Orchestrator {
    pub fn new(heartbeat: HeartbeatConfig) -> Self {
        Self {
            heartbeat,
            ..Self::default()
        }
    }

    pub fn with_monitor(mut self, monitor: Arc<Monitor>) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn heartbeat_config(&self) -> &HeartbeatConfig {
        &self.heartbeat
    }

    /// Adds a healthy node with empty backlog; `now` counts as its first heartbeat.
    pub fn register_node(&mut self, spec: NodeSpec, now: f64) -> Result<(), OrchestratorError> {
        if spec.node_id.is_empty() {
            return Err(OrchestratorError::InvalidNode("empty node_id".into()));
        }
        if !(spec.compute_rate_units_per_s.is_finite() && spec.compute_rate_units_per_s > 0.0) {
            return Err(OrchestratorError::InvalidNode(format!(
                "{}: compute rate must be > 0",
                spec.node_id
            )));
        }
        spec.profile
            .validate()
            .map_err(|e| OrchestratorError::InvalidNode(e.to_string()))?;
        if self.nodes.contains_key(&spec.node_id) {
            return Err(OrchestratorError::DuplicateNodeId(spec.node_id));
        }
        self.nodes.insert(
            spec.node_id.clone(),
            NodeDescriptor {
                node_id: spec.node_id,
                kind: spec.kind,
                compute_rate_units_per_s: spec.compute_rate_units_per_s,
                profile: spec.profile,
                healthy: true,
                backlog_s: 0.0,
                last_heartbeat: now,
            },
        );
        Ok(())
    }

    pub fn nodes(&self) -> Vec<NodeDescriptor> {
        self.nodes.values().cloned().collect()
    }

    pub fn node(&self, node_id: &str) -> Option<&NodeDescriptor> {
        self.nodes.get(node_id)
    }

    pub fn submit(&mut self, job: ReconJob) -> Result<(), OrchestratorError> {
        if self.jobs.contains_key(&job.job_id) {
            return Err(OrchestratorError::DuplicateJobId(job.job_id));
        }
        let job = ReconJob {
            state: JobState::Queued,
            assigned_node: None,
            ..job
        };
        self.jobs.insert(job.job_id.clone(), JobEntry { job, charged_s: 0.0 });
        Ok(())
    }

    pub fn job(&self, job_id: &str) -> Option<&ReconJob> {
        self.jobs.get(job_id).map(|e| &e.job)
    }

    pub fn jobs(&self) -> Vec<ReconJob> {
        self.jobs.values().map(|e| e.job.clone()).collect()
    }

    pub fn queued_jobs(&self) -> Vec<String> {
        self.jobs
            .values()
            .filter(|e| e.job.state == JobState::Queued)
            .map(|e| e.job.job_id.clone())
            .collect()
    }

    pub fn jobs_by_state(&self) -> BTreeMap<JobState, u64> {
        let mut out: BTreeMap<JobState, u64> = JobState::ALL.iter().map(|s| (*s, 0)).collect();
        for e in self.jobs.values() {
            *out.entry(e.job.state).or_default() += 1;
        }
        out
    }

    /// Number of DONE transitions ever committed.
    pub fn done_transitions(&self) -> u64 {
        self.done_transitions
    }

    fn entry_mut(&mut self, job_id: &str) -> Result<&mut JobEntry, OrchestratorError> {
        self.jobs
            .get_mut(job_id)
            .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))
    }

    fn illegal(job: &ReconJob, to: JobState) -> OrchestratorError {
        OrchestratorError::IllegalTransition {
            job_id: job.job_id.clone(),
            from: job.state,
            to,
        }
    }

    /// Assigns a queued job to the cheapest healthy node.
    pub fn assign(&mut self, job_id: &str) -> Result<String, OrchestratorError> {
        let entry = self
            .jobs
            .get(job_id)
            .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))?;
        if entry.job.state != JobState::Queued {
            return Err(Self::illegal(&entry.job, JobState::Assigned));
        }
        let node = choose_node(&entry.job, self.nodes.values()).ok_or(OrchestratorError::NoHealthyNode)?;
        let node_id = node.node_id.clone();
        let charge = entry.job.compute_units / node.compute_rate_units_per_s;

        self.nodes.get_mut(&node_id).unwrap().backlog_s += charge;
        let entry = self.entry_mut(job_id)?;
        entry.charged_s = charge;
        entry.job.state = JobState::Assigned;
        entry.job.assigned_node = Some(node_id.clone());
        Ok(node_id)
    }

    pub fn start(&mut self, job_id: &str, node_id: &str, attempt: u32) -> Result<(), OrchestratorError> {
        let entry = self.entry_mut(job_id)?;
        let job = &mut entry.job;
        if job.state != JobState::Assigned
            || job.attempt != attempt
            || job.assigned_node.as_deref() != Some(node_id)
        {
            return Err(Self::illegal(job, JobState::Running));
        }
        job.state = JobState::Running;
        Ok(())
    }

    fn release(&mut self, job_id: &str) {
        let entry = &self.jobs[job_id];
        let charged = entry.charged_s;
        if let Some(node_id) = entry.job.assigned_node.clone() {
            let others_live = self.jobs.values().any(|e| {
                e.job.job_id != job_id
                    && !e.job.state.is_terminal()
                    && e.job.assigned_node.as_deref() == Some(node_id.as_str())
            });
            if let Some(node) = self.nodes.get_mut(&node_id) {
                // an idle node gets exactly zero, not rounding residue
                node.backlog_s = if others_live { (node.backlog_s - charged).max(0.0) } else { 0.0 };
            }
        }
        self.jobs.get_mut(job_id).unwrap().charged_s = 0.0;
    }

    pub fn complete_job(&mut self, c: &Completion) -> Result<CompletionOutcome, OrchestratorError> {
        let job = &self.entry_mut(&c.job_id)?.job;
        let reason = if job.state.is_terminal() {
            Some(format!("job already {:?}", job.state))
        } else if job.attempt != c.attempt {
            Some(format!("stale attempt {} (current {})", c.attempt, job.attempt))
        } else if job.assigned_node.as_deref() != Some(c.node_id.as_str()) {
            Some(format!("node {} does not hold the job", c.node_id))
        } else if job.state != JobState::Running {
            Some(format!("job is {:?}, not RUNNING", job.state))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(CompletionOutcome::Discarded(reason));
        }
        self.release(&c.job_id);
        let job = &mut self.entry_mut(&c.job_id)?.job;
        job.state = JobState::Done;
        job.result_ref = Some(c.result_ref.clone());
        self.done_transitions += 1;
        Ok(CompletionOutcome::Committed)
    }

    /// Terminal failure reported by the node running the current attempt.
    pub fn fail_job(&mut self, job_id: &str, node_id: &str, attempt: u32) -> Result<CompletionOutcome, OrchestratorError> {
        let job = &self.entry_mut(job_id)?.job;
        if job.state != JobState::Running || job.attempt != attempt || job.assigned_node.as_deref() != Some(node_id) {
            return Ok(CompletionOutcome::Discarded("not the running attempt".into()));
        }
        self.release(job_id);
        self.entry_mut(job_id)?.job.state = JobState::Failed;
        Ok(CompletionOutcome::Committed)
    }

    /// Records a heartbeat; a node marked down becomes healthy again.
    pub fn heartbeat(&mut self, node_id: &str, timestamp: f64) -> Result<(), OrchestratorError> {
        let node = self
            .nodes
            .get_mut(node_id)
            .ok_or_else(|| OrchestratorError::UnknownNode(node_id.to_string()))?;
        node.last_heartbeat = node.last_heartbeat.max(timestamp);
        node.healthy = true;
        Ok(())
    }

    /// Marks nodes silent for longer than the heartbeat timeout as unhealthy
    /// and requeues their ASSIGNED/RUNNING jobs. Returns newly failed nodes.
    pub fn detect_failures(&mut self, now: f64) -> Vec<String> {
        let timeout = self.heartbeat.timeout_s();
        let failed: Vec<String> = self
            .nodes
            .values()
            .filter(|n| n.healthy && now - n.last_heartbeat > timeout)
            .map(|n| n.node_id.clone())
            .collect();
        for node_id in &failed {
            self.nodes.get_mut(node_id).unwrap().healthy = false;
            let stranded: Vec<String> = self
                .jobs
                .values()
                .filter(|e| {
                    matches!(e.job.state, JobState::Assigned | JobState::Running)
                        && e.job.assigned_node.as_deref() == Some(node_id.as_str())
                })
                .map(|e| e.job.job_id.clone())
                .collect();
            for job_id in &stranded {
                self.release(job_id);
                let job = &mut self.jobs.get_mut(job_id).unwrap().job;
                job.state = JobState::Queued;
                job.assigned_node = None;
                job.attempt += 1;
            }
            self.nodes.get_mut(node_id).unwrap().backlog_s = 0.0;
            if let Some(m) = &self.monitor {
                m.record_event(Event::new(
                    now,
                    EventKind::NodeDown,
                    node_id,
                    &format!("{} job(s) requeued", stranded.len()),
                ));
            }
        }
        failed
    }

    /// Checks backlog accounting and single-placement of every job.
    pub fn check_invariants(&self) -> Result<(), String> {
        for node in self.nodes.values() {
            let expected: f64 = self
                .jobs
                .values()
                .filter(|e| !e.job.state.is_terminal() && e.job.assigned_node.as_deref() == Some(node.node_id.as_str()))
                .map(|e| e.charged_s)
                .sum();
            if (expected - node.backlog_s).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(format!(
                    "node {} backlog {} != sum of charges {}",
                    node.node_id, node.backlog_s, expected
                ));
            }
        }
        for e in self.jobs.values() {
            let j = &e.job;
            let placed = j.assigned_node.is_some();
            let should_be_placed = matches!(j.state, JobState::Assigned | JobState::Running);
            if should_be_placed && !placed {
                return Err(format!("job {} is {:?} without a node", j.job_id, j.state));
            }
            if j.state == JobState::Queued && placed {
                return Err(format!("queued job {} still holds a node", j.job_id));
            }
            if j.attempt == 0 {
                return Err(format!("job {} has attempt 0", j.job_id));
            }
        }
        Ok(())
    }
}
