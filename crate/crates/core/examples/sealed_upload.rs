//! Seals containers for upload over two network profiles, in synchronous
//! and queued mode, and shows that tampering breaks authentication.
//!
//!     cargo run --example sealed_upload

use cloudmri::acquisition::simulate_dataset;
use cloudmri::raw_format::{decode_dataset, encode_dataset};
use cloudmri::recon::TEN_GB;
use cloudmri::transport::{estimate_transfer_time, unseal, NetworkProfile, TransferMode, UploadChannel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let key = [0x42u8; 32];
    let (d, _) = simulate_dataset(64, 0.0, 3)?;
    let container = encode_dataset(&d)?;

    for profile in [NetworkProfile::local_4g(), NetworkProfile::cloud_6g()] {
        println!(
            "{:<9} {:>6.0} Mbit/s  this scan {:.6}s  10 GB {:.4}s",
            profile.name,
            profile.rate_bits_per_s / 1e6,
            estimate_transfer_time(container.len() as u64, &profile),
            estimate_transfer_time(TEN_GB, &profile)
        );
    }

    let channel = UploadChannel::new(&key, NetworkProfile::local_4g(), *b"site")?;
    channel.simulate_upload(&container, TransferMode::Synchronous)?;
    for _ in 0..3 {
        channel.simulate_upload(&container, TransferMode::Asynchronous)?;
    }
    println!("queued {}, flushed {}", channel.pending_len(), channel.flush());

    let delivered = channel.take_delivered();
    for (i, del) in delivered.iter().enumerate() {
        let plain = unseal(&key, &del.blob)?;
        decode_dataset(&plain)?;
        println!("delivery {i}: nonce {} ok, {} bytes", hex::encode(del.blob.nonce), del.receipt.byte_count);
    }

    let mut forged = delivered[0].blob.clone();
    forged.ciphertext[100] ^= 1;
    println!("flipped ciphertext bit: {:?}", unseal(&key, &forged).err().map(|e| e.to_string()));
    println!("wrong key: {:?}", unseal(&[0u8; 32], &delivered[0].blob).err().map(|e| e.to_string()));
    Ok(())
}
