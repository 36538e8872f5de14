//! Hash-chained audit ledger and declarative access control.
//!
//! Every entry commits to its predecessor:
//!
//! ```text
//! entry_hash = SHA-256(index u64le || timestamp u64le
//!                      || len(actor_id) u64le || actor_id
//!                      || len(action) u64le || action
//!                      || resource_hash[32] || prev_hash[32])
//! ```
//!
//! with `prev_hash` of entry 0 equal to 32 zero bytes. On disk each entry is a
//! record `len u32le || canonical bytes || entry_hash`, appended and synced
//! before [`Ledger::append`] returns. The file itself is the chain.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GENESIS_PREV: [u8; 32] = [0u8; 32];

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger persistence failure: {0}")]
    PersistenceFailure(#[from] std::io::Error),
    #[error("ledger file is corrupt at entry {0}")]
    Corrupt(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Upload,
    Access,
    Recon,
    Review,
    ModelUpdate,
    Deny,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Upload,
        Action::Access,
        Action::Recon,
        Action::Review,
        Action::ModelUpdate,
        Action::Deny,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Upload => "UPLOAD",
            Action::Access => "ACCESS",
            Action::Recon => "RECON",
            Action::Review => "REVIEW",
            Action::ModelUpdate => "MODEL_UPDATE",
            Action::Deny => "DENY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub index: u64,
    pub timestamp: u64,
    pub actor_id: String,
    pub action: Action,
    #[serde(with = "hex::serde")]
    pub resource_hash: [u8; 32],
    #[serde(with = "hex::serde")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex::serde")]
    pub entry_hash: [u8; 32],
}

impl LedgerEntry {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(
            self.index,
            self.timestamp,
            &self.actor_id,
            self.action,
            &self.resource_hash,
            &self.prev_hash,
        )
    }

    pub fn compute_hash(&self) -> [u8; 32] {
        crate::sha256(&self.canonical_bytes())
    }
}

pub fn canonical_bytes(
    index: u64,
    timestamp: u64,
    actor_id: &str,
    action: Action,
    resource_hash: &[u8; 32],
    prev_hash: &[u8; 32],
) -> Vec<u8> {
    let action = action.as_str();
    let mut out = Vec::with_capacity(8 * 4 + actor_id.len() + action.len() + 64);
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&timestamp.to_le_bytes());
    out.extend_from_slice(&(actor_id.len() as u64).to_le_bytes());
    out.extend_from_slice(actor_id.as_bytes());
    out.extend_from_slice(&(action.len() as u64).to_le_bytes());
    out.extend_from_slice(action.as_bytes());
    out.extend_from_slice(resource_hash);
    out.extend_from_slice(prev_hash);
    out
}

// index, timestamp, actor, action, resource hash, prev hash
type CanonicalFields = (u64, u64, String, Action, [u8; 32], [u8; 32]);

fn parse_canonical(bytes: &[u8]) -> Option<CanonicalFields> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Option<&[u8]> {
        let end = pos.checked_add(n)?;
        let s = bytes.get(pos..end)?;
        pos = end;
        Some(s)
    };
    let index = u64::from_le_bytes(take(8)?.try_into().ok()?);
    let timestamp = u64::from_le_bytes(take(8)?.try_into().ok()?);
    let actor_len = usize::try_from(u64::from_le_bytes(take(8)?.try_into().ok()?)).ok()?;
    let actor = String::from_utf8(take(actor_len)?.to_vec()).ok()?;
    let action_len = usize::try_from(u64::from_le_bytes(take(8)?.try_into().ok()?)).ok()?;
    let action = Action::parse(std::str::from_utf8(take(action_len)?).ok()?)?;
    let resource: [u8; 32] = take(32)?.try_into().ok()?;
    let prev: [u8; 32] = take(32)?.try_into().ok()?;
    if pos != bytes.len() {
        return None;
    }
    Some((index, timestamp, actor, action, resource, prev))
}

/// Outcome of chain verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Verdict {
    Ok { ok: bool },
    Bad { ok: bool, first_bad_index: u64 },
}

impl Verdict {
    pub fn ok() -> Self {
        Verdict::Ok { ok: true }
    }

    pub fn bad(index: u64) -> Self {
        Verdict::Bad {
            ok: false,
            first_bad_index: index,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }

    pub fn first_bad_index(&self) -> Option<u64> {
        match self {
            Verdict::Ok { .. } => None,
            Verdict::Bad { first_bad_index, .. } => Some(*first_bad_index),
        }
    }
}

/// Recomputes every hash and link; reports the smallest failing index.
pub fn verify_chain(entries: &[LedgerEntry]) -> Verdict {
    let mut prev = GENESIS_PREV;
    for (i, e) in entries.iter().enumerate() {
        if e.index != i as u64 || e.prev_hash != prev || e.compute_hash() != e.entry_hash {
            return Verdict::bad(i as u64);
        }
        prev = e.entry_hash;
    }
    Verdict::ok()
}

fn record_bytes(e: &LedgerEntry) -> Vec<u8> {
    let canon = e.canonical_bytes();
    let mut out = Vec::with_capacity(4 + canon.len() + 32);
    out.extend_from_slice(&((canon.len() + 32) as u32).to_le_bytes());
    out.extend_from_slice(&canon);
    out.extend_from_slice(&e.entry_hash);
    out
}

/// Parses records until the bytes run out or a record is malformed. Returns
/// the parsed entries and, if parsing stopped early, the index it stopped at.
pub fn parse_records(bytes: &[u8]) -> (Vec<LedgerEntry>, Option<u64>) {
    let mut entries = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let bad = Some(entries.len() as u64);
        let Some(len) = bytes.get(pos..pos + 4) else {
            return (entries, bad);
        };
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        pos += 4;
        let Some(rec) = pos.checked_add(len).and_then(|end| bytes.get(pos..end)) else {
            return (entries, bad);
        };
        pos += len;
        if rec.len() < 32 {
            return (entries, bad);
        }
        let (canon, hash) = rec.split_at(rec.len() - 32);
        let Some((index, timestamp, actor_id, action, resource_hash, prev_hash)) = parse_canonical(canon) else {
            return (entries, bad);
        };
        entries.push(LedgerEntry {
            index,
            timestamp,
            actor_id,
            action,
            resource_hash,
            prev_hash,
            entry_hash: hash.try_into().unwrap(),
        });
    }
    (entries, None)
}

/// Verifies raw ledger file bytes.
pub fn verify_bytes(bytes: &[u8]) -> Verdict {
    let (entries, stopped) = parse_records(bytes);
    match (verify_chain(&entries), stopped) {
        (Verdict::Bad { first_bad_index, .. }, _) => Verdict::bad(first_bad_index),
        (_, Some(i)) => Verdict::bad(i),
        (ok, None) => ok,
    }
}

pub fn verify_file(path: &Path) -> Result<Verdict, LedgerError> {
    Ok(verify_bytes(&std::fs::read(path)?))
}

/// Single-writer hash chain, optionally persisted to an append-only file.
#[derive(Debug)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    file: Option<(PathBuf, File)>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self {
            entries: Vec::new(),
            file: None,
        }
    }

    /// Opens or creates the ledger file. A file that fails verification is
    /// refused, since appending to it would extend a broken chain.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if let Some(i) = verify_bytes(&bytes).first_bad_index() {
            return Err(LedgerError::Corrupt(i));
        }
        let (entries, _) = parse_records(&bytes);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries,
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn append(
        &mut self,
        actor_id: &str,
        action: Action,
        resource_hash: [u8; 32],
        timestamp: u64,
    ) -> Result<LedgerEntry, LedgerError> {
        let index = self.entries.len() as u64;
        let prev_hash = self.entries.last().map_or(GENESIS_PREV, |e| e.entry_hash);
        let mut entry = LedgerEntry {
            index,
            timestamp,
            actor_id: actor_id.to_string(),
            action,
            resource_hash,
            prev_hash,
            entry_hash: [0; 32],
        };
        entry.entry_hash = entry.compute_hash();
        if let Some((_, file)) = self.file.as_mut() {
            file.write_all(&record_bytes(&entry))?;
            file.sync_data()?;
        }
        self.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.entries.last().map(|e| e.timestamp)
    }

    /// Verifies the persisted file when there is one, else the in-memory chain.
    pub fn verify(&self) -> Result<Verdict, LedgerError> {
        match &self.file {
            Some((path, _)) => verify_file(path),
            None => Ok(verify_chain(&self.entries)),
        }
    }

    /// Serialized records of every entry, exactly as written to disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(record_bytes).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    Rawdata,
    Image,
    Report,
    Model,
}

impl ResourceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceClass::Rawdata => "rawdata",
            ResourceClass::Image => "image",
            ResourceClass::Report => "report",
            ResourceClass::Model => "model",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Allow,
    Deny,
}

/// Role or resource matcher; `"any"` matches everything.
pub const ANY: &str = "any";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRule {
    pub actor_role: String,
    pub action: Action,
    /// A [`ResourceClass`] name or `"any"`.
    pub resource_class: String,
    pub effect: Effect,
}

impl AccessRule {
    pub fn new(role: &str, action: Action, resource_class: &str, effect: Effect) -> Self {
        Self {
            actor_role: role.into(),
            action,
            resource_class: resource_class.into(),
            effect,
        }
    }

    fn matches(&self, role: &str, action: Action, class: ResourceClass) -> bool {
        (self.actor_role == ANY || self.actor_role == role)
            && self.action == action
            && (self.resource_class == ANY || self.resource_class == class.as_str())
    }
}

/// Ordered rules plus the actor-to-role map. First match wins; no match denies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub rules: Vec<AccessRule>,
    pub roles: BTreeMap<String, String>,
}

impl AccessPolicy {
    pub fn evaluate(&self, actor_id: &str, action: Action, class: ResourceClass) -> Effect {
        let Some(role) = self.roles.get(actor_id) else {
            return Effect::Deny;
        };
        self.rules
            .iter()
            .find(|r| r.matches(role, action, class))
            .map_or(Effect::Deny, |r| r.effect)
    }
}

/// Evaluates the policy and records the decision: the requested action on
/// allow, `DENY` otherwise. Exactly one entry is appended per call.
pub fn check_access(
    policy: &AccessPolicy,
    ledger: &mut Ledger,
    actor_id: &str,
    action: Action,
    class: ResourceClass,
    resource_hash: [u8; 32],
    timestamp: u64,
) -> Result<Effect, LedgerError> {
    let effect = policy.evaluate(actor_id, action, class);
    let recorded = match effect {
        Effect::Allow => action,
        Effect::Deny => Action::Deny,
    };
    ledger.append(actor_id, recorded, resource_hash, timestamp)?;
    Ok(effect)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hello() -> [u8; 32] {
        crate::sha256(b"hello")
    }

    #[test]
    fn genesis_and_link() {
        let mut l = Ledger::in_memory();
        let a = l.append("alice", Action::Upload, hello(), 42).unwrap();
        assert_eq!(a.index, 0);
        assert_eq!(a.prev_hash, GENESIS_PREV);
        let b = l.append("bob", Action::Access, hello(), 43).unwrap();
        assert_eq!(b.prev_hash, a.entry_hash);
        assert!(verify_chain(l.entries()).is_ok());
    }

    #[test]
    fn entry_hash_matches_external_sha256() {
        // Python hashlib over struct.pack('<Q', ...) canonical bytes.
        let mut l = Ledger::in_memory();
        let a = l.append("alice", Action::Upload, hello(), 42).unwrap();
        let b = l.append("bob", Action::Access, hello(), 43).unwrap();
        assert_eq!(
            hex::encode(a.entry_hash),
            "f9a0dd6e0fbaff1a4c1c8d6da60fccd649a288a5ba337beafa3bde8bd6fbdde3"
        );
        assert_eq!(
            hex::encode(b.entry_hash),
            "b2c76f9f6e4707443f7840fe40ea8fb5595dce66fdc58fbd7e8feefb7e314501"
        );
    }

    #[test]
    fn truncated_last_hash() {
        let mut l = Ledger::in_memory();
        for t in 0..5 {
            l.append("a", Action::Access, hello(), t).unwrap();
        }
        let mut bytes = l.to_bytes();
        assert!(verify_bytes(&bytes).is_ok());
        bytes.truncate(bytes.len() - 1);
        assert_eq!(verify_bytes(&bytes), Verdict::bad(4));
    }

    #[test]
    fn canonical_form_is_injective_on_separator_strings() {
        // Without length prefixes these two would concatenate identically.
        let a = canonical_bytes(0, 0, "ab", Action::Access, &[0; 32], &[0; 32]);
        let b = canonical_bytes(0, 0, "a", Action::Access, &[0; 32], &[0; 32]);
        assert_ne!(a, b);
        let c = canonical_bytes(0, 0, "x\0\0\0\0\0\0\0\x06ACCESS", Action::Access, &[0; 32], &[0; 32]);
        let d = canonical_bytes(0, 0, "x", Action::Access, &[0; 32], &[0; 32]);
        assert_ne!(c, d);
    }

    #[test]
    fn verdict_json() {
        assert_eq!(serde_json::to_string(&Verdict::ok()).unwrap(), r#"{"ok":true}"#);
        assert_eq!(
            serde_json::to_string(&Verdict::bad(57)).unwrap(),
            r#"{"ok":false,"first_bad_index":57}"#
        );
    }

    fn policy(rules: Vec<AccessRule>) -> AccessPolicy {
        AccessPolicy {
            rules,
            roles: [("rad-1".to_string(), "radiologist".to_string())].into(),
        }
    }

    #[test]
    fn default_deny_for_unmapped_actor() {
        let p = policy(vec![AccessRule::new(ANY, Action::Access, ANY, Effect::Allow)]);
        let mut l = Ledger::in_memory();
        let e = check_access(&p, &mut l, "stranger", Action::Access, ResourceClass::Image, [0; 32], 1).unwrap();
        assert_eq!(e, Effect::Deny);
        assert_eq!(l.entries()[0].action, Action::Deny);
    }

    #[test]
    fn allow_records_requested_action() {
        let p = policy(vec![AccessRule::new("radiologist", Action::Access, "image", Effect::Allow)]);
        let mut l = Ledger::in_memory();
        let e = check_access(&p, &mut l, "rad-1", Action::Access, ResourceClass::Image, [1; 32], 1).unwrap();
        assert_eq!(e, Effect::Allow);
        assert_eq!(l.entries()[0].action, Action::Access);
        assert_eq!(l.entries()[0].resource_hash, [1; 32]);
        // no rule for rawdata
        let e = check_access(&p, &mut l, "rad-1", Action::Access, ResourceClass::Rawdata, [1; 32], 2).unwrap();
        assert_eq!(e, Effect::Deny);
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn first_match_wins() {
        let p = policy(vec![
            AccessRule::new(ANY, Action::Access, "rawdata", Effect::Deny),
            AccessRule::new("radiologist", Action::Access, "rawdata", Effect::Allow),
        ]);
        assert_eq!(p.evaluate("rad-1", Action::Access, ResourceClass::Rawdata), Effect::Deny);
    }

    #[test]
    fn file_persistence_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        {
            let mut l = Ledger::open(&path).unwrap();
            l.append("a", Action::Upload, hello(), 1).unwrap();
            l.append("b", Action::Recon, hello(), 2).unwrap();
        }
        let size = std::fs::metadata(&path).unwrap().len();
        let mut l = Ledger::open(&path).unwrap();
        assert_eq!(l.len(), 2);
        let e = l.append("c", Action::Review, hello(), 3).unwrap();
        assert_eq!(e.prev_hash, l.entries()[1].entry_hash);
        assert!(std::fs::metadata(&path).unwrap().len() > size);
        assert!(l.verify().unwrap().is_ok());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Ledger::open(&path), Err(LedgerError::Corrupt(0))));
        assert_eq!(verify_file(&path).unwrap(), Verdict::bad(0));
    }
}
