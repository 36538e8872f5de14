//! Federated averaging across three simulated hospitals. Only parameters and
//! sample counts cross the network; each round is written to the ledger.
//!
//!     cargo run --example federated_rounds -- [config.json]

use cloudmri::federated::{run_federation, FederationConfig, HospitalConfig};
use cloudmri::ledger::Ledger;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg: FederationConfig = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FederationConfig {
            hospitals: ["st-mary", "north", "lakeside"]
                .iter()
                .enumerate()
                .map(|(i, id)| HospitalConfig { hospital_id: id.to_string(), n_samples: 40 + 30 * i, seed: i as u64 })
                .collect(),
            epochs: 2,
            learning_rate: 0.1,
            rounds: 15,
            model_dim: 8,
        },
    };
    let mut ledger = Ledger::in_memory();
    let run = run_federation(&cfg, Some(&mut ledger), 1_700_000_000)?;

    for (r, l) in run.losses.iter().enumerate() {
        println!("after round {r:>2}: pooled loss {l:.6}");
    }
    let first = &run.transcript.messages[..4.min(run.transcript.messages.len())];
    println!("first messages on the wire:");
    for m in first {
        let s = serde_json::to_string(m)?;
        println!("  {}", if s.len() > 110 { format!("{}...", &s[..110]) } else { s });
    }
    println!(
        "{} messages, {} ledger entries, chain ok: {}",
        run.transcript.messages.len(),
        ledger.len(),
        ledger.verify()?.is_ok()
    );
    Ok(())
}
