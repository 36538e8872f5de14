//! Sealed transfer of container bytes and the network time model.
//!
//! Blobs are sealed with AES-256-GCM (empty associated data). Transfer time
//! is virtual: `latency + overhead + 8 * bytes / rate`, never slept.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raw_format::{decode_dataset, RawFormatError};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
    #[error("nonce must be {NONCE_LEN} bytes, got {0}")]
    BadNonceLength(usize),
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("sealed blob shorter than nonce and tag ({0} bytes)")]
    MalformedBlob(usize),
    #[error("invalid network profile: {0}")]
    InvalidProfile(String),
    #[error("container rejected: {0}")]
    Container(#[from] RawFormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub rate_bits_per_s: f64,
    pub latency_s: f64,
    pub per_file_overhead_s: f64,
}

impl NetworkProfile {
    pub const LOCAL_4G: &'static str = "LOCAL_4G";
    pub const CLOUD_6G: &'static str = "CLOUD_6G";

    /// In-hospital dedicated 4G link. The rate is chosen so that 10 GB take
    /// 816 s. The nominal "100 MB" label gives 100 s read as bytes and
    /// 800 s read as bits.
    pub fn local_4g() -> Self {
        Self {
            name: Self::LOCAL_4G.into(),
            rate_bits_per_s: 9.804e7,
            latency_s: 0.05,
            per_file_overhead_s: 0.0,
        }
    }

    /// Multi-region 6G link, 1 TB/s.
    pub fn cloud_6g() -> Self {
        Self {
            name: Self::CLOUD_6G.into(),
            rate_bits_per_s: 8e12,
            latency_s: 0.0,
            per_file_overhead_s: 0.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            Self::LOCAL_4G => Some(Self::local_4g()),
            Self::CLOUD_6G => Some(Self::cloud_6g()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.rate_bits_per_s.is_finite() && self.rate_bits_per_s > 0.0) {
            return Err(TransportError::InvalidProfile(format!(
                "{}: rate_bits_per_s must be > 0",
                self.name
            )));
        }
        if !(self.latency_s >= 0.0 && self.per_file_overhead_s >= 0.0) {
            return Err(TransportError::InvalidProfile(format!(
                "{}: latency and overhead must be >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn estimate_transfer_time(byte_count: u64, profile: &NetworkProfile) -> f64 {
    profile.latency_s + profile.per_file_overhead_s + 8.0 * byte_count as f64 / profile.rate_bits_per_s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBlob {
    /// Wire layout: `nonce || ciphertext || tag`, no framing.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(TransportError::MalformedBlob(bytes.len()));
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
        Ok(Self {
            nonce: nonce.try_into().unwrap(),
            ciphertext: ct.to_vec(),
            tag: tag.try_into().unwrap(),
        })
    }
}

fn cipher(key: &[u8]) -> Result<Aes256Gcm, TransportError> {
    if key.len() != KEY_LEN {
        return Err(TransportError::BadKeyLength(key.len()));
    }
    Aes256Gcm::new_from_slice(key).map_err(|_| TransportError::BadKeyLength(key.len()))
}

/// AES-256-GCM encryption. The caller must never reuse a nonce under one key.
pub fn seal(key: &[u8], plaintext: &[u8], nonce: &[u8]) -> Result<SealedBlob, TransportError> {
    let cipher = cipher(key)?;
    if nonce.len() != NONCE_LEN {
        return Err(TransportError::BadNonceLength(nonce.len()));
    }
    let mut out = cipher
        .encrypt(Nonce::from_slice(nonce), plaintext)
        .map_err(|_| TransportError::AuthenticationFailure)?;
    let tag = out.split_off(out.len() - TAG_LEN);
    Ok(SealedBlob {
        nonce: nonce.try_into().unwrap(),
        ciphertext: out,
        tag: tag.try_into().unwrap(),
    })
}

pub fn unseal(key: &[u8], blob: &SealedBlob) -> Result<Vec<u8>, TransportError> {
    let cipher = cipher(key)?;
    let mut ct = Vec::with_capacity(blob.ciphertext.len() + TAG_LEN);
    ct.extend_from_slice(&blob.ciphertext);
    ct.extend_from_slice(&blob.tag);
    cipher
        .decrypt(Nonce::from_slice(&blob.nonce), ct.as_slice())
        .map_err(|_| TransportError::AuthenticationFailure)
}

/// 96-bit nonces: a 4-byte sender prefix followed by a 64-bit big-endian counter.
#[derive(Debug)]
pub struct NonceCounter {
    prefix: [u8; 4],
    next: AtomicU64,
}

impl NonceCounter {
    pub fn new(prefix: [u8; 4], start: u64) -> Self {
        Self {
            prefix,
            next: AtomicU64::new(start),
        }
    }

    pub fn next_nonce(&self) -> [u8; NONCE_LEN] {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let mut out = [0u8; NONCE_LEN];
        out[..4].copy_from_slice(&self.prefix);
        out[4..].copy_from_slice(&n.to_be_bytes());
        out
    }

    pub fn peek(&self) -> u64 {
        self.next.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Scan and transfer proceed together; the receipt is final on return.
    Synchronous,
    /// The blob is queued for later delivery; the receipt is returned at once.
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReceipt {
    #[serde(with = "hex::serde")]
    pub content_hash: [u8; 32],
    pub byte_count: u64,
    pub simulated_seconds: f64,
    pub profile_name: String,
}

/// Validates, seals and times one container. Pure apart from the nonce.
pub fn seal_for_upload(
    container: &[u8],
    key: &[u8],
    nonce: &[u8],
    profile: &NetworkProfile,
) -> Result<(TransferReceipt, SealedBlob), TransportError> {
    decode_dataset(container)?;
    let blob = seal(key, container, nonce)?;
    let receipt = TransferReceipt {
        content_hash: crate::sha256(container),
        byte_count: container.len() as u64,
        simulated_seconds: estimate_transfer_time(container.len() as u64, profile),
        profile_name: profile.name.clone(),
    };
    Ok((receipt, blob))
}

/// A sealed delivery with its receipt.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub receipt: TransferReceipt,
    pub blob: SealedBlob,
}

/// Upload endpoint of one sender: seals with a counter nonce and delivers
/// either immediately or through a queue drained by [`UploadChannel::flush`].
#[derive(Debug)]
pub struct UploadChannel {
    key: Vec<u8>,
    profile: NetworkProfile,
    nonces: NonceCounter,
    pending: Mutex<VecDeque<Delivery>>,
    delivered: Mutex<Vec<Delivery>>,
}

impl UploadChannel {
    pub fn new(key: &[u8], profile: NetworkProfile, nonce_prefix: [u8; 4]) -> Result<Self, TransportError> {
        if key.len() != KEY_LEN {
            return Err(TransportError::BadKeyLength(key.len()));
        }
        profile.validate()?;
        Ok(Self {
            key: key.to_vec(),
            profile,
            nonces: NonceCounter::new(nonce_prefix, 0),
            pending: Mutex::new(VecDeque::new()),
            delivered: Mutex::new(Vec::new()),
        })
    }

    pub fn simulate_upload(&self, container: &[u8], mode: TransferMode) -> Result<TransferReceipt, TransportError> {
        let nonce = self.nonces.next_nonce();
        let (receipt, blob) = seal_for_upload(container, &self.key, &nonce, &self.profile)?;
        let delivery = Delivery {
            receipt: receipt.clone(),
            blob,
        };
        match mode {
            TransferMode::Synchronous => self.delivered.lock().unwrap().push(delivery),
            TransferMode::Asynchronous => self.pending.lock().unwrap().push_back(delivery),
        }
        Ok(receipt)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.lock().unwrap().len()
    }

    /// Moves every queued delivery to the delivered list; returns how many moved.
    pub fn flush(&self) -> usize {
        let drained: Vec<Delivery> = self.pending.lock().unwrap().drain(..).collect();
        let n = drained.len();
        self.delivered.lock().unwrap().extend(drained);
        n
    }

    pub fn take_delivered(&self) -> Vec<Delivery> {
        std::mem::take(&mut *self.delivered.lock().unwrap())
    }
}
