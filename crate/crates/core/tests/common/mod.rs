#![allow(dead_code)]

use cloudmri::raw_format::{flags, Acquisition, DatasetHeader, RawDataset};
use cloudmri::transport::{seal, SealedBlob};
use cloudmri::Complex32;
use rand::seq::SliceRandom;
use rand::Rng;

const ALPHABET: &[char] = &['a', 'Z', '0', '9', '-', '_', ' ', '=', ':', '/', 'é', 'ß', '中'];

fn text(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn real(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0.1..10.0),
        1 => f64::from(rng.gen_range(1u32..5000)),
        2 => rng.gen::<f64>() * 1e-6 + 1e-12,
        _ => rng.gen_range(1.0..1e6) * 1e3,
    }
}

/// A valid dataset with random header values and a random subset of lines.
pub fn random_dataset(rng: &mut impl Rng) -> RawDataset {
    let matrix_x = rng.gen_range(1..=12u32);
    let matrix_y = rng.gen_range(1..=12u32);
    let coils = rng.gen_range(1..=3u32);
    let header = DatasetHeader {
        vendor: text(rng, 1, 20),
        patient_pseudo_id: text(rng, 0, 24),
        matrix_x,
        matrix_y,
        coils,
        field_tesla: real(rng),
        te_ms: real(rng),
        tr_ms: real(rng),
        retention_years: rng.gen_range(30..200),
    };
    let mut lines: Vec<u32> = (0..matrix_y).collect();
    lines.shuffle(rng);
    lines.truncate(rng.gen_range(0..=matrix_y as usize));
    let acquisitions = lines
        .into_iter()
        .map(|ky| Acquisition {
            flags: rng.gen::<u16>() & (flags::FIRST_IN_SLICE | flags::LAST_IN_SLICE | flags::NOISE_ADJUST),
            coil_count: coils as u16,
            num_samples: matrix_x,
            ky_index: ky,
            samples: (0..coils * matrix_x)
                .map(|_| Complex32::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)))
                .collect(),
        })
        .collect();
    RawDataset::new(header, acquisitions)
}

pub const TEST_KEY: [u8; 32] = [7u8; 32];

pub fn sealed(container: &[u8], key: &[u8], counter: u8) -> Vec<u8> {
    let mut nonce = [0u8; 12];
    nonce[11] = counter;
    seal(key, container, &nonce).unwrap().to_bytes()
}

pub fn unseal_bytes(key: &[u8], bytes: &[u8]) -> Option<Vec<u8>> {
    let blob = SealedBlob::from_bytes(bytes).ok()?;
    cloudmri::transport::unseal(key, &blob).ok()
}
