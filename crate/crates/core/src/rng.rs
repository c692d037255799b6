//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! master seed, a domain tag and an index. ChaCha is counter based, so a
//! stream for `(seed, domain, index)` is the same regardless of which other
//! streams were consumed first or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep unrelated consumers of one master seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Latent = 1,
    Label = 2,
    Bandwidth = 3,
    Split = 4,
    Triplet = 5,
    Init = 6,
    Augment = 7,
    Rotation = 8,
    Repeat = 9,
    Heldout = 10,
    Subset = 11,
}

/// SplitMix64 finalizer; used to spread `(seed, domain)` into a ChaCha key.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. one per experiment repeat.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(domain as u64)) ^ index)
}

/// Independent stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(domain as u64)));
    rng.set_stream(index);
    rng
}
