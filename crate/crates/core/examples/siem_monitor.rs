//! Feeds a synthetic event stream to the monitor: a burst of denials from
//! one source and a spike in upload volume.
//!
//!     cargo run --example siem_monitor

use cloudmri::monitor::{Event, EventKind, Monitor, MonitorConfig};

fn main() {
    let m = Monitor::new(MonitorConfig::default());
    // 40 quiet minutes of uploads, 4 or 6 a minute
    for minute in 0..40 {
        let n = if minute % 2 == 0 { 4 } else { 6 };
        for i in 0..n {
            m.record_event(Event::new(minute as f64 * 60.0 + i as f64 * 9.0, EventKind::Upload, "tech-01", "rawdata"));
        }
        m.detect_anomalies(minute as f64 * 60.0 + 59.0);
    }
    // a stray denial, then three in 20 seconds
    m.record_event(Event::new(2405.0, EventKind::Deny, "mallory", "UPLOAD rawdata"));
    for t in [2500.0, 2510.0, 2520.0] {
        m.record_event(Event::new(t, EventKind::Deny, "eve", "ACCESS image"));
    }
    // minute 41: fifty uploads
    for i in 0..50 {
        m.record_event(Event::new(2460.0 + i as f64, EventKind::Upload, "script", "rawdata"));
    }
    m.detect_anomalies(2519.0);
    m.detect_anomalies(2530.0);

    for a in m.alerts() {
        println!(
            "{:?} {} window [{}, {}] evidence {} events{}",
            a.severity,
            a.rule_name,
            a.window.0,
            a.window.1,
            a.evidence.len(),
            a.z_score.map_or(String::new(), |z| format!(" z={z:.1}"))
        );
    }
    for (k, v) in m.metrics_snapshot() {
        println!("{k} {v}");
    }
}
