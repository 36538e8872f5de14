//! Event collection, counters and anomaly detection.
//!
//! Two detectors run over a snapshot of the event store:
//!
//! * `unauthorized-access-burst`: at least `burst_k` DENY events from one
//!   source within `burst_window_s` seconds. Bursts do not overlap: after an
//!   alert, counting restarts after its last evidence event.
//! * `rate-anomaly`: the event count of the current minute has a z-score
//!   above `z_threshold` against the previous `rate_window_minutes` full
//!   minutes (population standard deviation, which must be positive).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub const BURST_RULE: &str = "unauthorized-access-burst";
pub const RATE_RULE: &str = "rate-anomaly";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Deny,
    Upload,
    ReconDone,
    ReconFail,
    NodeDown,
    Heartbeat,
    Review,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Deny,
        EventKind::Upload,
        EventKind::ReconDone,
        EventKind::ReconFail,
        EventKind::NodeDown,
        EventKind::Heartbeat,
        EventKind::Review,
    ];

    pub fn counter_name(self) -> &'static str {
        match self {
            EventKind::Deny => "events_deny",
            EventKind::Upload => "events_upload",
            EventKind::ReconDone => "events_recon_done",
            EventKind::ReconFail => "events_recon_fail",
            EventKind::NodeDown => "events_node_down",
            EventKind::Heartbeat => "events_heartbeat",
            EventKind::Review => "events_review",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: f64,
    pub kind: EventKind,
    pub source: String,
    pub detail: String,
}

impl Event {
    pub fn new(timestamp: f64, kind: EventKind, source: &str, detail: &str) -> Self {
        Self {
            timestamp,
            kind,
            source: source.into(),
            detail: detail.into(),
        }
    }
}

/// Position of an event in the store, in recording order.
pub type EventId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub rule_name: String,
    pub severity: Severity,
    pub window: (f64, f64),
    pub evidence: Vec<EventId>,
    /// Only set for rate alerts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub burst_k: usize,
    pub burst_window_s: f64,
    pub z_threshold: f64,
    pub rate_window_minutes: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            burst_k: 3,
            burst_window_s: 60.0,
            z_threshold: 3.0,
            rate_window_minutes: 30,
        }
    }
}

#[derive(Debug, Default)]
struct State {
    events: Vec<Event>,
    counters: BTreeMap<String, u64>,
    gauges: BTreeMap<String, u64>,
    alerts: Vec<Alert>,
    // de-duplication keys of alerts already raised
    burst_keys: BTreeSet<Vec<EventId>>,
    rate_minutes: BTreeSet<i64>,
}

#[derive(Debug, Default)]
pub struct Monitor {
    config: MonitorConfig,
    state: Mutex<State>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Self {
        Self {
            config,
            state: Mutex::default(),
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn record_event(&self, e: Event) -> EventId {
        let mut s = self.state.lock().unwrap();
        *s.counters.entry(e.kind.counter_name().to_string()).or_default() += 1;
        s.events.push(e);
        s.events.len() - 1
    }

    /// Sets a point-in-time value such as `jobs_done`.
    pub fn set_gauge(&self, name: &str, value: u64) {
        self.state.lock().unwrap().gauges.insert(name.to_string(), value);
    }

    pub fn events(&self) -> Vec<Event> {
        self.state.lock().unwrap().events.clone()
    }

    pub fn alerts(&self) -> Vec<Alert> {
        self.state.lock().unwrap().alerts.clone()
    }

    /// Runs both detectors on events up to `now` and returns alerts not raised before.
    pub fn detect_anomalies(&self, now: f64) -> Vec<Alert> {
        let events = self.events();
        let found = detect(&self.config, &events, now);
        let mut s = self.state.lock().unwrap();
        let mut fresh = Vec::new();
        for a in found {
            let new = if a.rule_name == BURST_RULE {
                s.burst_keys.insert(a.evidence.clone())
            } else {
                s.rate_minutes.insert((a.window.0 / 60.0).floor() as i64)
            };
            if new {
                let key = format!("alerts_{}", a.rule_name.replace('-', "_"));
                *s.counters.entry(key).or_default() += 1;
                s.alerts.push(a.clone());
                fresh.push(a);
            }
        }
        fresh
    }

    /// Copy of all counters: events by kind, gauges (jobs by state), alerts by rule.
    pub fn metrics_snapshot(&self) -> BTreeMap<String, u64> {
        let s = self.state.lock().unwrap();
        let mut out: BTreeMap<String, u64> = EventKind::ALL
            .iter()
            .map(|k| (k.counter_name().to_string(), 0))
            .collect();
        for rule in [BURST_RULE, RATE_RULE] {
            out.insert(format!("alerts_{}", rule.replace('-', "_")), 0);
        }
        out.extend(s.gauges.iter().map(|(k, v)| (k.clone(), *v)));
        out.extend(s.counters.iter().map(|(k, v)| (k.clone(), *v)));
        out.insert("events_total".into(), s.events.len() as u64);
        out
    }
}

/// Pure detector pass; deterministic in its inputs.
pub fn detect(config: &MonitorConfig, events: &[Event], now: f64) -> Vec<Alert> {
    let mut alerts = detect_bursts(config, events, now);
    alerts.extend(detect_rate(config, events, now));
    alerts
}

fn detect_bursts(config: &MonitorConfig, events: &[Event], now: f64) -> Vec<Alert> {
    let k = config.burst_k.max(1);
    let mut by_source: BTreeMap<&str, Vec<EventId>> = BTreeMap::new();
    for (id, e) in events.iter().enumerate() {
        if e.kind == EventKind::Deny && e.timestamp <= now {
            by_source.entry(e.source.as_str()).or_default().push(id);
        }
    }
    let mut alerts = Vec::new();
    for ids in by_source.values_mut() {
        ids.sort_by(|a, b| events[*a].timestamp.total_cmp(&events[*b].timestamp).then(a.cmp(b)));
        let mut start = 0;
        for end in 0..ids.len() {
            let t_end = events[ids[end]].timestamp;
            while t_end - events[ids[start]].timestamp > config.burst_window_s {
                start += 1;
            }
            if end + 1 - start >= k {
                let evidence: Vec<EventId> = ids[start..=end].to_vec();
                alerts.push(Alert {
                    rule_name: BURST_RULE.into(),
                    severity: Severity::High,
                    window: (events[evidence[0]].timestamp, t_end),
                    evidence,
                    z_score: None,
                });
                start = end + 1;
            }
        }
    }
    alerts
}

fn detect_rate(config: &MonitorConfig, events: &[Event], now: f64) -> Vec<Alert> {
    let window = config.rate_window_minutes;
    let visible: Vec<(EventId, i64)> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.timestamp <= now)
        .map(|(id, e)| (id, (e.timestamp / 60.0).floor() as i64))
        .collect();
    let Some(first_minute) = visible.iter().map(|(_, m)| *m).min() else {
        return Vec::new();
    };
    let current = (now / 60.0).floor() as i64;
    if window == 0 || current - first_minute < window as i64 {
        return Vec::new();
    }
    let mut counts = vec![0u64; window];
    let mut evidence = Vec::new();
    for &(id, m) in &visible {
        if m == current {
            evidence.push(id);
        } else if m < current && m >= current - window as i64 {
            counts[(m - (current - window as i64)) as usize] += 1;
        }
    }
    let z = z_score(&counts, evidence.len() as f64);
    match z {
        Some(z) if z > config.z_threshold && !evidence.is_empty() => vec![Alert {
            rule_name: RATE_RULE.into(),
            severity: Severity::Warning,
            window: (current as f64 * 60.0, now),
            evidence,
            z_score: Some(z),
        }],
        _ => Vec::new(),
    }
}

/// z-score of `value` against `history` (population std); `None` when std is 0.
pub fn z_score(history: &[u64], value: f64) -> Option<f64> {
    if history.is_empty() {
        return None;
    }
    let n = history.len() as f64;
    let mean = history.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = history.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (std > 0.0).then(|| (value - mean) / std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deny(t: f64, who: &str) -> Event {
        Event::new(t, EventKind::Deny, who, "")
    }

    #[test]
    fn counters_match_recount() {
        let m = Monitor::default();
        let kinds = [EventKind::Upload, EventKind::Deny, EventKind::Upload, EventKind::Review];
        for (i, k) in kinds.iter().enumerate() {
            m.record_event(Event::new(i as f64, *k, "x", ""));
        }
        let snap = m.metrics_snapshot();
        assert_eq!(snap["events_total"], 4);
        for k in EventKind::ALL {
            let recount = m.events().iter().filter(|e| e.kind == k).count() as u64;
            assert_eq!(snap[k.counter_name()], recount);
        }
    }

    #[test]
    fn fresh_snapshot_is_zero() {
        let snap = Monitor::default().metrics_snapshot();
        assert!(snap.values().all(|v| *v == 0));
    }

    #[test]
    fn snapshot_is_a_copy() {
        let m = Monitor::default();
        let before = m.metrics_snapshot();
        m.record_event(Event::new(0.0, EventKind::Upload, "a", ""));
        assert_eq!(before["events_upload"], 0);
        assert_eq!(m.metrics_snapshot()["events_upload"], 1);
    }

    #[test]
    fn burst_needs_three_in_window() {
        let m = Monitor::default();
        m.record_event(deny(0.0, "eve"));
        m.record_event(deny(30.0, "eve"));
        assert!(m.detect_anomalies(30.0).is_empty());
        m.record_event(deny(59.0, "eve"));
        let alerts = m.detect_anomalies(59.0);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].evidence, vec![0, 1, 2]);
        assert_eq!(alerts[0].severity, Severity::High);
        // same triple never alerts twice
        assert!(m.detect_anomalies(70.0).is_empty());
        assert_eq!(m.metrics_snapshot()["alerts_unauthorized_access_burst"], 1);
    }

    #[test]
    fn spread_out_denies_do_not_burst() {
        let events: Vec<Event> = (0..10).map(|i| deny(i as f64 * 31.0, "eve")).collect();
        assert!(detect(&MonitorConfig::default(), &events, 1000.0).is_empty());
    }

    #[test]
    fn z_score_hand_values() {
        assert_eq!(z_score(&[10, 10, 10], 50.0), None);
        // mean 10, population std 1
        assert_eq!(z_score(&[9, 11, 9, 11], 13.0), Some(3.0));
    }
}
