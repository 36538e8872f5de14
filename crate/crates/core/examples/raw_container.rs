//! Builds a raw container from a simulated scan, writes it, reads it back
//! and shows what a single flipped bit does.
//!
//!     cargo run --example raw_container -- [out.cmri]

use cloudmri::acquisition::simulate_dataset;
use cloudmri::raw_format::{decode_dataset, encode_dataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("phantom.cmri").display().to_string());

    let (dataset, _truth) = simulate_dataset(64, 0.01, 7)?;
    let bytes = encode_dataset(&dataset)?;
    std::fs::write(&out, &bytes)?;
    println!("wrote {out}: {} bytes, sha256 {}", bytes.len(), cloudmri::sha256_hex(&bytes));

    let back = decode_dataset(&std::fs::read(&out)?)?;
    let h = &back.header;
    println!(
        "header: vendor={} patient={} matrix={}x{} coils={} B0={}T TE={}ms TR={}ms retention={}y",
        h.vendor, h.patient_pseudo_id, h.matrix_x, h.matrix_y, h.coils, h.field_tesla, h.te_ms, h.tr_ms, h.retention_years
    );
    println!("acquisitions: {}, identical after round trip: {}", back.acquisitions.len(), back == dataset);

    let mut bad = bytes.clone();
    bad[bytes.len() / 2] ^= 0x04;
    match decode_dataset(&bad) {
        Ok(_) => println!("corrupted copy decoded (unexpected)"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    match decode_dataset(&bytes[..bytes.len() - 5]) {
        Ok(_) => println!("truncated copy decoded (unexpected)"),
        Err(e) => println!("truncated copy rejected: {e}"),
    }
    Ok(())
}
