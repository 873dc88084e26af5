//! Deterministic random-number substreams.
//!
//! Every random decision in the pipeline — weight init, batch shuffling,
//! dropout masks, cohort synthesis, fold assignment — draws from its own
//! named substream derived from one root seed. Substreams make the pieces
//! independent: adding a draw to one consumer never shifts the sequence seen
//! by another, which is what keeps whole runs byte-for-byte reproducible.
//!
//! A substream is identified by `(label, index)`. The label names the
//! consumer ("dropout", "synth", ...) and the index distinguishes repeated
//! uses, e.g. one stream per epoch or per subject.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `(root, label, index)` into a 64-bit seed.
///
/// FNV-1a absorbs the label bytes, then two rounds of the splitmix64
/// finalizer scramble the result so that nearby roots or indices land far
/// apart in seed space.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

    let mut h = FNV_OFFSET ^ root;
    for &b in label.as_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(h).wrapping_add(index))
}

/// A ChaCha stream cipher RNG seeded from [`derive_seed`].
pub fn substream(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
