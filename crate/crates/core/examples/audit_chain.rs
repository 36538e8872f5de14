//! Access decisions on a hash-chained ledger file, then a tamper and the
//! verifier pointing at the damaged entry.
//!
//!     cargo run --example audit_chain

use cloudmri::ledger::{check_access, verify_file, AccessPolicy, AccessRule, Action, Effect, Ledger, ResourceClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir()?;
    let path = dir.join("ledger.bin");
    let _ = std::fs::remove_file(&path);

    let mut policy = AccessPolicy::default();
    policy.rules.push(AccessRule::new("operator", Action::Upload, "rawdata", Effect::Allow));
    policy.rules.push(AccessRule::new("radiologist", Action::Access, "any", Effect::Allow));
    policy.rules.push(AccessRule::new("any", Action::Access, "rawdata", Effect::Deny));
    policy.roles.insert("tech-01".into(), "operator".into());
    policy.roles.insert("rad-01".into(), "radiologist".into());

    let mut ledger = Ledger::open(&path)?;
    let requests = [
        ("tech-01", Action::Upload, ResourceClass::Rawdata),
        ("rad-01", Action::Access, ResourceClass::Image),
        ("tech-01", Action::Access, ResourceClass::Image),
        ("intruder", Action::Upload, ResourceClass::Rawdata),
    ];
    for (i, (actor, action, class)) in requests.into_iter().enumerate() {
        let effect = check_access(&policy, &mut ledger, actor, action, class, cloudmri::sha256(&[i as u8]), 1000 + i as u64)?;
        println!("{actor:<9} {:<7} {:<8} -> {effect:?}", action.as_str(), class.as_str());
    }
    for e in ledger.entries() {
        println!("#{} {} {:<7} prev {}.. hash {}..", e.index, e.actor_id, e.action.as_str(), &hex::encode(e.prev_hash)[..12], &hex::encode(e.entry_hash)[..12]);
    }
    println!("verify: {}", serde_json::to_string(&verify_file(&path)?)?);

    // rewrite one actor in place: "rad-01" -> "rad-02"
    let mut bytes = std::fs::read(&path)?;
    let at = bytes.windows(6).position(|w| w == b"rad-01").ok_or("actor not found")?;
    bytes[at + 5] = b'2';
    std::fs::write(&path, bytes)?;
    println!("after tamper: {}", serde_json::to_string(&verify_file(&path)?)?);
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let d = std::env::temp_dir().join("cloudmri-audit-example");
    std::fs::create_dir_all(&d)?;
    Ok(d)
}
