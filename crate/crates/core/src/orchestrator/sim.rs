//! Fixed-tick fleet simulation on top of [`Orchestrator`].
//!
//! Live nodes heartbeat every interval and finish work after its modeled
//! transfer + compute time. A crashed node stops heart-beating and never
//! finishes in time. With `zombie_completions` it still reports its in-flight
//! jobs after being declared down, which exercises the stale-completion path.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Completion, CompletionOutcome, HeartbeatConfig, JobState, NodeSpec, Orchestrator, OrchestratorError,
    ReconJob,
};
use crate::monitor::Monitor;
use crate::recon::ReconParams;
use crate::transport::estimate_transfer_time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimJob {
    pub job_id: String,
    pub submit_at: f64,
    pub byte_count: u64,
    pub compute_units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCrash {
    pub node_id: String,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetScenario {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub heartbeat: HeartbeatConfig,
    pub jobs: Vec<SimJob>,
    #[serde(default)]
    pub crashes: Vec<NodeCrash>,
    #[serde(default)]
    pub zombie_completions: bool,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
}

fn default_tick() -> f64 {
    0.5
}

fn default_horizon() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: String,
    pub state: JobState,
    pub node: Option<String>,
    pub attempt: u32,
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetReport {
    pub jobs: Vec<JobOutcome>,
    pub failed_nodes: Vec<(String, f64)>,
    pub committed: u64,
    pub discarded: u64,
    pub end_time: f64,
}

#[derive(Debug, Clone)]
struct Running {
    job_id: String,
    node_id: String,
    attempt: u32,
    finish_at: f64,
}

pub struct FleetSimulator {
    scenario: FleetScenario,
    monitor: Option<Arc<Monitor>>,
}

impl FleetSimulator {
    pub fn new(scenario: FleetScenario) -> Self {
        Self {
            scenario,
            monitor: None,
        }
    }

    pub fn with_monitor(mut self, monitor: Arc<Monitor>) -> Self {
        self.monitor = Some(monitor);
        self
    }

    /// Runs until every job is terminal or the horizon is reached.
    pub fn run(&self) -> Result<FleetReport, OrchestratorError> {
        let sc = &self.scenario;
        let mut orch = Orchestrator::new(sc.heartbeat.clone());
        if let Some(m) = &self.monitor {
            orch = orch.with_monitor(m.clone());
        }
        for n in &sc.nodes {
            orch.register_node(n.clone(), 0.0)?;
        }
        let crash_at: BTreeMap<&str, f64> = sc.crashes.iter().map(|c| (c.node_id.as_str(), c.at)).collect();
        let alive = |node: &str, t: f64| crash_at.get(node).is_none_or(|&c| t < c);

        let mut pending: Vec<&SimJob> = sc.jobs.iter().collect();
        pending.sort_by(|a, b| a.submit_at.total_cmp(&b.submit_at).then(a.job_id.cmp(&b.job_id)));
        let mut pending = pending.into_iter().peekable();
        let mut running: Vec<Running> = Vec::new();
        let mut finished_at: BTreeMap<String, f64> = BTreeMap::new();
        let mut failed_nodes = Vec::new();
        let (mut committed, mut discarded) = (0u64, 0u64);
        let mut next_beat = sc.heartbeat.interval_s;
        let mut t = 0.0;

        loop {
            while let Some(j) = pending.next_if(|j| j.submit_at <= t) {
                let job = ReconJob {
                    compute_units: j.compute_units,
                    ..ReconJob::new(&j.job_id, crate::sha256(j.job_id.as_bytes()), j.byte_count, ReconParams::default(), 1, 1)
                };
                orch.submit(job)?;
            }

            if t >= next_beat {
                for n in &sc.nodes {
                    if alive(&n.node_id, t) {
                        orch.heartbeat(&n.node_id, t)?;
                    }
                }
                next_beat += sc.heartbeat.interval_s;
            }
            for node in orch.detect_failures(t) {
                failed_nodes.push((node, t));
            }

            // Completions due by now. Work on a crashed node never finishes in
            // time; as a zombie it reports once the node has been declared down.
            let (due, rest): (Vec<Running>, Vec<Running>) = running.into_iter().partition(|r| {
                r.finish_at <= t && (alive(&r.node_id, r.finish_at) || orch.node(&r.node_id).is_some_and(|n| !n.healthy))
            });
            running = rest;
            for r in due {
                if !alive(&r.node_id, r.finish_at) && !sc.zombie_completions {
                    continue;
                }
                let outcome = orch.complete_job(&Completion {
                    job_id: r.job_id.clone(),
                    node_id: r.node_id.clone(),
                    attempt: r.attempt,
                    result_ref: format!("{}@{}#{}", r.job_id, r.node_id, r.attempt),
                })?;
                match outcome {
                    CompletionOutcome::Committed => {
                        committed += 1;
                        finished_at.insert(r.job_id, t);
                    }
                    CompletionOutcome::Discarded(_) => discarded += 1,
                }
            }

            for job_id in orch.queued_jobs() {
                let node_id = match orch.assign(&job_id) {
                    Ok(n) => n,
                    Err(OrchestratorError::NoHealthyNode) => break,
                    Err(e) => return Err(e),
                };
                let job = orch.job(&job_id).unwrap().clone();
                orch.start(&job_id, &node_id, job.attempt)?;
                let node = orch.node(&node_id).unwrap();
                let duration = estimate_transfer_time(job.byte_count, &node.profile)
                    + job.compute_units / node.compute_rate_units_per_s;
                running.push(Running {
                    job_id,
                    node_id,
                    attempt: job.attempt,
                    finish_at: t + duration,
                });
            }

            let all_done = pending.peek().is_none() && orch.jobs().iter().all(|j| j.state.is_terminal());
            let zombies_left = sc.zombie_completions && !running.is_empty();
            if (all_done && !zombies_left) || t >= sc.horizon_s {
                break;
            }
            t += sc.tick_s;
        }

        let jobs = orch
            .jobs()
            .into_iter()
            .map(|j| JobOutcome {
                finished_at: finished_at.get(&j.job_id).copied(),
                job_id: j.job_id,
                state: j.state,
                node: j.assigned_node,
                attempt: j.attempt,
            })
            .collect();
        Ok(FleetReport {
            jobs,
            failed_nodes,
            committed,
            discarded,
            end_time: t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::NodeKind;
    use crate::transport::NetworkProfile;

    fn node(id: &str, rate: f64) -> NodeSpec {
        NodeSpec {
            node_id: id.into(),
            kind: NodeKind::Cloud,
            compute_rate_units_per_s: rate,
            profile: NetworkProfile::cloud_6g(),
        }
    }

    #[test]
    fn crash_reroutes_with_zombie_discarded() {
        let sc = FleetScenario {
            nodes: vec![node("fast", 1.0), node("slow", 0.5)],
            heartbeat: HeartbeatConfig::default(),
            jobs: vec![SimJob {
                job_id: "j1".into(),
                submit_at: 0.0,
                byte_count: 1000,
                compute_units: 30.0,
            }],
            crashes: vec![NodeCrash {
                node_id: "fast".into(),
                at: 2.0,
            }],
            zombie_completions: true,
            tick_s: 0.5,
            horizon_s: 600.0,
        };
        let monitor = Arc::new(Monitor::default());
        let r = FleetSimulator::new(sc).with_monitor(monitor.clone()).run().unwrap();
        assert_eq!(r.failed_nodes.len(), 1);
        assert_eq!(r.failed_nodes[0].0, "fast");
        // last beat at t=0 (registration), so failure is detected at the first tick past 15 s
        assert!(r.failed_nodes[0].1 > 15.0 && r.failed_nodes[0].1 <= 15.5);
        assert_eq!(r.committed, 1);
        assert_eq!(r.discarded, 1);
        let j = &r.jobs[0];
        assert_eq!(j.state, JobState::Done);
        assert_eq!(j.node.as_deref(), Some("slow"));
        assert_eq!(j.attempt, 2);
        assert_eq!(monitor.metrics_snapshot()["events_node_down"], 1);
    }
}
