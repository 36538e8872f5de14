mod common;

use cloudmri::raw_format::{decode_dataset, encode_dataset, RawFormatError, MAGIC};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64) -> cloudmri::raw_format::RawDataset {
    common::random_dataset(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>()) {
        let d = dataset(seed);
        let bytes = encode_dataset(&d).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn any_single_bit_flip_is_rejected(seed in any::<u64>(), pick in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = encode_dataset(&dataset(seed)).unwrap();
        let mut bad = bytes.clone();
        let i = pick.index(bad.len());
        bad[i] ^= 1 << bit;
        prop_assert!(decode_dataset(&bad).is_err());
    }

    #[test]
    fn truncation_is_rejected(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let bytes = encode_dataset(&dataset(seed)).unwrap();
        let cut = pick.index(bytes.len());
        prop_assert!(decode_dataset(&bytes[..cut]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_dataset(&bytes);
    }

    #[test]
    fn magic_prefixed_noise_never_panics(tail in prop::collection::vec(any::<u8>(), 0..256)) {
        let mut bytes = MAGIC.to_vec();
        bytes.extend(tail);
        prop_assert!(decode_dataset(&bytes).is_err());
    }

    #[test]
    fn sealing_round_trips_the_container(seed in any::<u64>(), counter in any::<u8>()) {
        let bytes = encode_dataset(&dataset(seed)).unwrap();
        let blob = common::sealed(&bytes, &common::TEST_KEY, counter);
        prop_assert_eq!(common::unseal_bytes(&common::TEST_KEY, &blob), Some(bytes));
    }
}

#[test]
fn error_kinds() {
    let bytes = encode_dataset(&dataset(1)).unwrap();
    assert!(matches!(decode_dataset(b"NOTCMRI!...."), Err(RawFormatError::BadMagic)));
    assert!(matches!(
        decode_dataset(&bytes[..10]),
        Err(RawFormatError::TruncatedFile { .. })
    ));
    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    assert!(matches!(decode_dataset(&bad), Err(RawFormatError::ChecksumMismatch)));
}
