//! Deterministic named sub-streams derived from a single master seed.
//!
//! Every random draw in an experiment comes from `substream(master, name)`
//! or one of the indexed variants, so reruns from the same config are
//! bit-identical and adding a new consumer never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over bytes; stable, dependency-free name hashing.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step, used to expand a 64-bit state into key material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for the sub-stream `name` of `master`.
pub fn substream(master: u64, name: &str) -> ChaCha8Rng {
    let mut state = master ^ fnv1a64(name.as_bytes());
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Sub-stream further indexed by a counter (trial number, sweep point, ...).
pub fn substream_indexed(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut state = master ^ fnv1a64(name.as_bytes()) ^ index.wrapping_mul(0xa076_1d64_78bd_642f);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// 64-bit content hash used for config hashes and cache keys.
pub fn content_hash(bytes: &[u8]) -> u64 {
    fnv1a64(bytes)
}
