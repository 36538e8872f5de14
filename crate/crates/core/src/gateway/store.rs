//! Content-addressed object store: `objects/<kind>/<sha256-hex>` plus a
//! `.meta.json` sidecar. Objects are written once and never modified.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Rawdata,
    Image,
    Report,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Rawdata, ObjectKind::Image, ObjectKind::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Rawdata => "rawdata",
            ObjectKind::Image => "image",
            ObjectKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: String,
    pub kind: ObjectKind,
    pub byte_count: u64,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredObject {
    pub meta: ObjectMeta,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AuditFinding {
    pub kind: ObjectKind,
    pub object_id: String,
    pub problem: String,
}

#[derive(Debug, Clone)]
pub struct ObjectStore {
    root: PathBuf,
}

pub fn is_object_id(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl ObjectStore {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        for k in ObjectKind::ALL {
            fs::create_dir_all(root.join(k.as_str()))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    fn path(&self, kind: ObjectKind, id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(id)
    }

    fn meta_path(&self, kind: ObjectKind, id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{id}.meta.json"))
    }

    /// Stores `bytes` under their SHA-256. Returns the id and whether a new
    /// object was written; an existing object is left untouched.
    pub fn put(&self, kind: ObjectKind, bytes: &[u8], created_at: u64) -> std::io::Result<(String, bool)> {
        let id = crate::sha256_hex(bytes);
        let path = self.path(kind, &id);
        if path.exists() {
            return Ok((id, false));
        }
        let meta = ObjectMeta {
            object_id: id.clone(),
            kind,
            byte_count: bytes.len() as u64,
            created_at,
        };
        write_atomic(&self.meta_path(kind, &id), &serde_json::to_vec_pretty(&meta).unwrap())?;
        write_atomic(&path, bytes)?;
        Ok((id, true))
    }

    pub fn contains(&self, kind: ObjectKind, id: &str) -> bool {
        is_object_id(id) && self.path(kind, id).is_file()
    }

    pub fn get(&self, kind: ObjectKind, id: &str) -> std::io::Result<Option<StoredObject>> {
        if !self.contains(kind, id) {
            return Ok(None);
        }
        let bytes = fs::read(self.path(kind, id))?;
        let meta = match fs::read(self.meta_path(kind, id)) {
            Ok(m) => serde_json::from_slice(&m).map_err(std::io::Error::other)?,
            Err(_) => ObjectMeta {
                object_id: id.to_string(),
                kind,
                byte_count: bytes.len() as u64,
                created_at: 0,
            },
        };
        Ok(Some(StoredObject { meta, bytes }))
    }

    pub fn list(&self, kind: ObjectKind) -> std::io::Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join(kind.as_str()))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| is_object_id(n))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Re-hashes every object; an empty result means the store is consistent.
    pub fn audit(&self) -> std::io::Result<Vec<AuditFinding>> {
        let mut findings = Vec::new();
        for kind in ObjectKind::ALL {
            for id in self.list(kind)? {
                let bytes = fs::read(self.path(kind, &id))?;
                let actual = crate::sha256_hex(&bytes);
                if actual != id {
                    findings.push(AuditFinding {
                        kind,
                        object_id: id,
                        problem: format!("content hashes to {actual}"),
                    });
                }
            }
        }
        Ok(findings)
    }
}

/// Write to a temp file then rename, so readers never see partial objects.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}
