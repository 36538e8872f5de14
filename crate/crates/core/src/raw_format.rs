//! `.cmri` raw data container.
//!
//! A self-describing binary file for single-slice Cartesian k-space with a
//! vendor identification header. Layout, all integers little-endian:
//!
//! ```text
//! "CMRIRAW1"                     8 bytes magic
//! header_len                     u32
//! header                         UTF-8 `key=value` lines joined by LF, fixed key order
//! acquisition_count              u32
//! per acquisition:
//!     flags u16, coil_count u16, num_samples u32, ky_index u32,
//!     coil-major samples as (f32 re, f32 im)
//! sha256                         32 bytes over everything before it
//! ```
//!
//! Encoding is canonical: equal datasets always produce identical bytes, so
//! the SHA-256 of a file can serve as its content address.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex32;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CMRIRAW1";
pub const DIGEST_LEN: usize = 32;
pub const MIN_RETENTION_YEARS: i64 = 30;
pub const MAX_VENDOR_LEN: usize = 64;

const HEADER_KEYS: [&str; 9] = [
    "vendor",
    "patient_pseudo_id",
    "matrix_x",
    "matrix_y",
    "coils",
    "field_tesla",
    "te_ms",
    "tr_ms",
    "retention_years",
];

/// Per-acquisition flag bits.
pub mod flags {
    pub const FIRST_IN_SLICE: u16 = 1 << 0;
    pub const LAST_IN_SLICE: u16 = 1 << 1;
    pub const NOISE_ADJUST: u16 = 1 << 2;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RawFormatError {
    #[error("invalid dataset: {}", format_violations(.0))]
    InvalidDataset(Vec<Violation>),
    #[error("bad magic; not a CMRIRAW1 container")]
    BadMagic,
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("trailing checksum does not match file contents")]
    ChecksumMismatch,
    #[error("header parse error: {0}")]
    HeaderParse(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

/// One violated invariant, tagged with the field it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub vendor: String,
    /// Pseudonymous subject label. Never a real patient identifier.
    pub patient_pseudo_id: String,
    pub matrix_x: u32,
    pub matrix_y: u32,
    pub coils: u32,
    pub field_tesla: f64,
    pub te_ms: f64,
    pub tr_ms: f64,
    pub retention_years: i64,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self {
            vendor: "GENERIC".into(),
            patient_pseudo_id: "anon-0000".into(),
            matrix_x: 128,
            matrix_y: 128,
            coils: 1,
            field_tesla: 3.0,
            te_ms: 10.0,
            tr_ms: 500.0,
            retention_years: MIN_RETENTION_YEARS,
        }
    }
}

impl DatasetHeader {
    pub fn with_matrix(matrix_x: u32, matrix_y: u32) -> Self {
        Self {
            matrix_x,
            matrix_y,
            ..Self::default()
        }
    }

    fn to_text(&self) -> String {
        let values = [
            self.vendor.clone(),
            self.patient_pseudo_id.clone(),
            self.matrix_x.to_string(),
            self.matrix_y.to_string(),
            self.coils.to_string(),
            self.field_tesla.to_string(),
            self.te_ms.to_string(),
            self.tr_ms.to_string(),
            self.retention_years.to_string(),
        ];
        HEADER_KEYS
            .iter()
            .zip(values.iter())
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn parse_text(text: &str) -> Result<Self, RawFormatError> {
        let mut slots: [Option<&str>; 9] = [None; 9];
        for line in text.split('\n') {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RawFormatError::HeaderParse(format!("line without '=': {line:?}")))?;
            let pos = HEADER_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| RawFormatError::HeaderParse(format!("unknown key {key:?}")))?;
            if slots[pos].replace(value).is_some() {
                return Err(RawFormatError::HeaderParse(format!("duplicate key {key:?}")));
            }
        }
        let get = |i: usize| {
            slots[i].ok_or_else(|| {
                RawFormatError::HeaderParse(format!("missing key {:?}", HEADER_KEYS[i]))
            })
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, RawFormatError> {
            v.parse()
                .map_err(|_| RawFormatError::HeaderParse(format!("{key}: not a number: {v:?}")))
        }
        Ok(Self {
            vendor: get(0)?.to_string(),
            patient_pseudo_id: get(1)?.to_string(),
            matrix_x: num("matrix_x", get(2)?)?,
            matrix_y: num("matrix_y", get(3)?)?,
            coils: num("coils", get(4)?)?,
            field_tesla: num("field_tesla", get(5)?)?,
            te_ms: num("te_ms", get(6)?)?,
            tr_ms: num("tr_ms", get(7)?)?,
            retention_years: num("retention_years", get(8)?)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub flags: u16,
    pub coil_count: u16,
    pub num_samples: u32,
    /// Phase-encode line, 0-based grid row.
    pub ky_index: u32,
    /// Coil-major: `num_samples` values for coil 0, then coil 1, ...
    pub samples: Vec<Complex32>,
}

impl Acquisition {
    pub fn coil(&self, c: usize) -> &[Complex32] {
        let n = self.num_samples as usize;
        &self.samples[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub header: DatasetHeader,
    pub acquisitions: Vec<Acquisition>,
}

impl RawDataset {
    /// Builds a dataset with acquisitions sorted by `ky_index`.
    pub fn new(header: DatasetHeader, mut acquisitions: Vec<Acquisition>) -> Self {
        acquisitions.sort_by_key(|a| a.ky_index);
        Self {
            header,
            acquisitions,
        }
    }

    pub fn header_only(header: DatasetHeader) -> Self {
        Self {
            header,
            acquisitions: Vec::new(),
        }
    }

    /// Every violated invariant of header and acquisitions.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = validate_header(&self.header);
        let h = &self.header;
        let mut seen = BTreeSet::new();
        for (i, a) in self.acquisitions.iter().enumerate() {
            let field = |f: &str| format!("acquisitions[{i}].{f}");
            if u32::from(a.coil_count) != h.coils {
                report.push(Violation::new(
                    field("coil_count"),
                    format!("{} != header coils {}", a.coil_count, h.coils),
                ));
            }
            if a.num_samples != h.matrix_x {
                report.push(Violation::new(
                    field("num_samples"),
                    format!("{} != header matrix_x {}", a.num_samples, h.matrix_x),
                ));
            }
            if a.ky_index >= h.matrix_y {
                report.push(Violation::new(
                    field("ky_index"),
                    format!("{} outside 0..{}", a.ky_index, h.matrix_y),
                ));
            }
            if !seen.insert(a.ky_index) {
                report.push(Violation::new(
                    field("ky_index"),
                    format!("duplicate ky_index {}", a.ky_index),
                ));
            }
            let expected = a.coil_count as usize * a.num_samples as usize;
            if a.samples.len() != expected {
                report.push(Violation::new(
                    field("samples"),
                    format!("length {} != coil_count*num_samples {}", a.samples.len(), expected),
                ));
            }
            if a.samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
                report.push(Violation::new(field("samples"), "non-finite sample"));
            }
        }
        report
    }
}

/// Lists every violated header invariant; an empty report means valid.
pub fn validate_header(h: &DatasetHeader) -> Vec<Violation> {
    let mut report = Vec::new();
    let text_ok = |s: &str| !s.contains('\n');
    if h.vendor.is_empty() || h.vendor.len() > MAX_VENDOR_LEN {
        report.push(Violation::new(
            "vendor",
            format!("must be 1..={MAX_VENDOR_LEN} bytes"),
        ));
    }
    if !text_ok(&h.vendor) {
        report.push(Violation::new("vendor", "must not contain a line feed"));
    }
    if !text_ok(&h.patient_pseudo_id) {
        report.push(Violation::new("patient_pseudo_id", "must not contain a line feed"));
    }
    for (name, v) in [("matrix_x", h.matrix_x), ("matrix_y", h.matrix_y)] {
        if v == 0 {
            report.push(Violation::new(name, "must be >= 1"));
        }
    }
    if h.coils == 0 {
        report.push(Violation::new("coils", "must be >= 1"));
    } else if h.coils > u32::from(u16::MAX) {
        report.push(Violation::new("coils", "must fit in 16 bits"));
    }
    for (name, v) in [
        ("field_tesla", h.field_tesla),
        ("te_ms", h.te_ms),
        ("tr_ms", h.tr_ms),
    ] {
        if !(v.is_finite() && v > 0.0) {
            report.push(Violation::new(name, "must be a positive finite number"));
        }
    }
    if h.retention_years < MIN_RETENTION_YEARS {
        report.push(Violation::new(
            "retention_years",
            format!(
                "{} below minimum {MIN_RETENTION_YEARS}",
                h.retention_years
            ),
        ));
    }
    report
}

pub fn encode_dataset(d: &RawDataset) -> Result<Vec<u8>, RawFormatError> {
    let report = d.validate();
    if !report.is_empty() {
        return Err(RawFormatError::InvalidDataset(report));
    }
    let header = d.header.to_text();
    let sample_bytes: usize = d.acquisitions.iter().map(|a| 12 + a.samples.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + 4 + header.len() + 4 + sample_bytes + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(d.acquisitions.len() as u32).to_le_bytes());

    let mut order: Vec<&Acquisition> = d.acquisitions.iter().collect();
    order.sort_by_key(|a| a.ky_index);
    for a in order {
        out.extend_from_slice(&a.flags.to_le_bytes());
        out.extend_from_slice(&a.coil_count.to_le_bytes());
        out.extend_from_slice(&a.num_samples.to_le_bytes());
        out.extend_from_slice(&a.ky_index.to_le_bytes());
        for s in &a.samples {
            out.extend_from_slice(&s.re.to_le_bytes());
            out.extend_from_slice(&s.im.to_le_bytes());
        }
    }
    let digest = crate::sha256(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RawFormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(RawFormatError::TruncatedFile {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, RawFormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, RawFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, RawFormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Total on arbitrary input: returns a dataset or a typed error.
pub fn decode_dataset(bytes: &[u8]) -> Result<RawDataset, RawFormatError> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(RawFormatError::TruncatedFile {
                offset: 0,
                needed: MAGIC.len(),
                available: bytes.len(),
            })
        } else {
            Err(RawFormatError::BadMagic)
        };
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(RawFormatError::BadMagic);
    }
    let min_len = MAGIC.len() + 4 + 4 + DIGEST_LEN;
    if bytes.len() < min_len {
        return Err(RawFormatError::TruncatedFile {
            offset: bytes.len(),
            needed: min_len - bytes.len(),
            available: 0,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if crate::sha256(body) != digest {
        return Err(RawFormatError::ChecksumMismatch);
    }

    let mut cur = Cursor {
        buf: body,
        pos: MAGIC.len(),
    };
    let header_len = cur.u32()? as usize;
    let header_text = std::str::from_utf8(cur.take(header_len)?)
        .map_err(|e| RawFormatError::HeaderParse(format!("header is not UTF-8: {e}")))?;
    let header = DatasetHeader::parse_text(header_text)?;
    let header_report = validate_header(&header);
    if !header_report.is_empty() {
        return Err(RawFormatError::InvariantViolation(format_violations(
            &header_report,
        )));
    }

    let count = cur.u32()? as usize;
    // Each acquisition needs at least its 12-byte prefix.
    if count > cur.remaining() / 12 + 1 {
        return Err(RawFormatError::TruncatedFile {
            offset: cur.pos,
            needed: count * 12,
            available: cur.remaining(),
        });
    }
    let mut acquisitions = Vec::with_capacity(count);
    for _ in 0..count {
        let flags = cur.u16()?;
        let coil_count = cur.u16()?;
        let num_samples = cur.u32()?;
        let ky_index = cur.u32()?;
        let n = coil_count as usize * num_samples as usize;
        if n.saturating_mul(8) > cur.remaining() {
            return Err(RawFormatError::TruncatedFile {
                offset: cur.pos,
                needed: n.saturating_mul(8),
                available: cur.remaining(),
            });
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let re = cur.f32()?;
            let im = cur.f32()?;
            samples.push(Complex32::new(re, im));
        }
        acquisitions.push(Acquisition {
            flags,
            coil_count,
            num_samples,
            ky_index,
            samples,
        });
    }
    if cur.remaining() != 0 {
        return Err(RawFormatError::InvariantViolation(format!(
            "{} unparsed bytes before checksum",
            cur.remaining()
        )));
    }

    let dataset = RawDataset::new(header, acquisitions);
    let report = dataset.validate();
    if !report.is_empty() {
        return Err(RawFormatError::InvariantViolation(format_violations(&report)));
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_2x2() -> RawDataset {
        let header = DatasetHeader {
            vendor: "ACME".into(),
            patient_pseudo_id: "anon-0001".into(),
            matrix_x: 2,
            matrix_y: 2,
            coils: 1,
            field_tesla: 1.5,
            te_ms: 10.5,
            tr_ms: 500.0,
            retention_years: 30,
        };
        RawDataset::new(
            header,
            vec![
                Acquisition {
                    flags: 0,
                    coil_count: 1,
                    num_samples: 2,
                    ky_index: 1,
                    samples: vec![Complex32::new(-1.0, 2.0), Complex32::new(0.0, 0.0)],
                },
                Acquisition {
                    flags: flags::FIRST_IN_SLICE,
                    coil_count: 1,
                    num_samples: 2,
                    ky_index: 0,
                    samples: vec![Complex32::new(1.0, 0.0), Complex32::new(0.5, -0.25)],
                },
            ],
        )
    }

    #[test]
    fn header_only_file_size() {
        let h = DatasetHeader::default();
        let text_len = h.to_text().len();
        let bytes = encode_dataset(&RawDataset::header_only(h)).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + text_len + 4 + 32);
        assert!(decode_dataset(&bytes).unwrap().acquisitions.is_empty());
    }

    #[test]
    fn fixed_dataset_digest_matches_external_sha256() {
        // Computed with Python hashlib over a byte layout assembled by struct.pack.
        let bytes = encode_dataset(&fixed_2x2()).unwrap();
        assert_eq!(bytes.len(), 229);
        assert_eq!(
            hex::encode(&bytes[bytes.len() - 32..]),
            "8abe29c5b934537e9cbee22a240c2951d28e0ae59bfe2a44dd02f7b3efe31e0d"
        );
    }

    #[test]
    fn round_trip_sorts_acquisitions() {
        let d = fixed_2x2();
        let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.acquisitions[0].ky_index, 0);
    }

    #[test]
    fn last_byte_flip_is_checksum_mismatch() {
        let mut bytes = encode_dataset(&fixed_2x2()).unwrap();
        *bytes.last_mut().unwrap() ^= 1;
        assert_eq!(decode_dataset(&bytes), Err(RawFormatError::ChecksumMismatch));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_dataset(&fixed_2x2()).unwrap();
        bytes[7] = b'X';
        assert_eq!(decode_dataset(&bytes), Err(RawFormatError::BadMagic));
        assert_eq!(decode_dataset(b"nope"), Err(RawFormatError::BadMagic));
        assert!(matches!(
            decode_dataset(b"CMRI"),
            Err(RawFormatError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn default_header_is_valid() {
        assert!(validate_header(&DatasetHeader::with_matrix(128, 128)).is_empty());
    }

    #[test]
    fn zero_coils_reported_once() {
        let h = DatasetHeader {
            coils: 0,
            ..DatasetHeader::default()
        };
        let report = validate_header(&h);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "coils");
    }

    #[test]
    fn short_retention_names_minimum() {
        let h = DatasetHeader {
            retention_years: 10,
            ..DatasetHeader::default()
        };
        let report = validate_header(&h);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "retention_years");
        assert!(report[0].message.contains("30"));
    }

    #[test]
    fn duplicate_ky_rejected_on_encode() {
        let mut d = fixed_2x2();
        d.acquisitions[1].ky_index = 0;
        d.acquisitions[0].ky_index = 0;
        assert!(matches!(
            encode_dataset(&d),
            Err(RawFormatError::InvalidDataset(_))
        ));
    }

    fn reseal(mut body: Vec<u8>) -> Vec<u8> {
        let d = crate::sha256(&body);
        body.extend_from_slice(&d);
        body
    }

    #[test]
    fn duplicate_ky_rejected_on_decode() {
        let bytes = encode_dataset(&fixed_2x2()).unwrap();
        let mut body = bytes[..bytes.len() - 32].to_vec();
        // second acquisition's ky_index lives 8 bytes into its record
        let second = body.len() - (12 + 16) + 8;
        body[second..second + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_dataset(&reseal(body)),
            Err(RawFormatError::InvariantViolation(_))
        ));
    }

    #[test]
    fn header_errors() {
        let d = fixed_2x2();
        let bytes = encode_dataset(&d).unwrap();
        let text = d.header.to_text();
        let start = 12;
        let end = start + text.len();

        let dup = text.replace("coils=1", "vendor=X");
        let mut body = bytes[..bytes.len() - 32].to_vec();
        body.splice(start..end, dup.bytes());
        body[8..12].copy_from_slice(&(dup.len() as u32).to_le_bytes());
        assert!(matches!(
            decode_dataset(&reseal(body)),
            Err(RawFormatError::HeaderParse(m)) if m.contains("duplicate")
        ));

        let bad = text.replace("matrix_x=2", "matrix_x=two");
        let mut body = bytes[..bytes.len() - 32].to_vec();
        body.splice(start..end, bad.bytes());
        body[8..12].copy_from_slice(&(bad.len() as u32).to_le_bytes());
        assert!(matches!(
            decode_dataset(&reseal(body)),
            Err(RawFormatError::HeaderParse(m)) if m.contains("matrix_x")
        ));
    }

    #[test]
    fn truncated_after_valid_checksum() {
        let bytes = encode_dataset(&fixed_2x2()).unwrap();
        let mut body = bytes[..bytes.len() - 32].to_vec();
        body.truncate(body.len() - 4);
        assert!(matches!(
            decode_dataset(&reseal(body)),
            Err(RawFormatError::TruncatedFile { .. })
        ));
    }
}
