//! Simulates a cloud/edge fleet where a node dies mid-run. Work in flight is
//! requeued, late reports from the dead node are discarded and every job
//! finishes exactly once.
//!
//!     cargo run --example fleet_failover -- [scenario.json]

use std::sync::Arc;

use cloudmri::monitor::Monitor;
use cloudmri::orchestrator::sim::{FleetScenario, FleetSimulator, NodeCrash, SimJob};
use cloudmri::orchestrator::{HeartbeatConfig, NodeKind, NodeSpec};
use cloudmri::transport::NetworkProfile;

fn default_scenario() -> FleetScenario {
    let node = |id: &str, kind, rate, profile| NodeSpec { node_id: id.into(), kind, compute_rate_units_per_s: rate, profile };
    FleetScenario {
        nodes: vec![
            node("cloud-a", NodeKind::Cloud, 20.0, NetworkProfile::cloud_6g()),
            node("cloud-b", NodeKind::Cloud, 10.0, NetworkProfile::cloud_6g()),
            node("edge-1", NodeKind::Edge, 2.0, NetworkProfile::local_4g()),
        ],
        heartbeat: HeartbeatConfig::default(),
        jobs: (0..12)
            .map(|i| SimJob { job_id: format!("job-{i:06}"), submit_at: i as f64, byte_count: 200 << 20, compute_units: 150.0 })
            .collect(),
        crashes: vec![NodeCrash { node_id: "cloud-a".into(), at: 8.0 }],
        zombie_completions: true,
        tick_s: 0.5,
        horizon_s: 3600.0,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => default_scenario(),
    };
    let monitor = Arc::new(Monitor::default());
    let report = FleetSimulator::new(scenario).with_monitor(monitor.clone()).run()?;

    for (node, t) in &report.failed_nodes {
        println!("node {node} declared down at t={t}");
    }
    for j in &report.jobs {
        println!(
            "{} {:?} on {} (attempt {}) at t={}",
            j.job_id,
            j.state,
            j.node.as_deref().unwrap_or("-"),
            j.attempt,
            j.finished_at.map_or("-".into(), |t| format!("{t:.1}"))
        );
    }
    println!("commits {}, stale reports discarded {}, end t={}", report.committed, report.discarded, report.end_time);
    println!("node_down events: {}", monitor.metrics_snapshot()["events_node_down"]);
    Ok(())
}
