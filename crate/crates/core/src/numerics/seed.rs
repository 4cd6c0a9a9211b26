use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent stream seed from a base seed, a stream tag and an
/// index (SplitMix64 finalizer over the mixed inputs).
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for b in stream.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(base: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
