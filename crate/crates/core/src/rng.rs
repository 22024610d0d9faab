//! Reproducible, independent random streams.
//!
//! Each stream is a ChaCha8 generator whose key is derived from a user seed
//! and a tuple of integer coordinates (cell, replication, draw index, ...).
//! Streams never share state, so work can be split across threads without
//! changing any result.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator keyed on `(seed, coords...)`.
pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        let mut word = h ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407);
        for &c in coords {
            word = splitmix64(word ^ splitmix64(c.wrapping_add(i as u64)));
        }
        chunk.copy_from_slice(&word.to_le_bytes());
        h = splitmix64(h);
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(coords.len() as u64);
    rng
}

/// Uniform random permutation of `0..len` (Fisher–Yates).
pub fn permutation(seed: u64, coords: &[u64], len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut stream(seed, coords));
    perm
}
