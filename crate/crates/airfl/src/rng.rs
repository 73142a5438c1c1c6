//! Deterministic stream derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! (seed, domain, a, b). Identical config + seed therefore reproduces the
//! whole trajectory byte-for-byte, and orthogonal concerns (channel fading,
//! additive noise, minibatch choice, attack randomness, initial clustering)
//! can be re-seeded independently, e.g. to vary only the noise across
//! Monte-Carlo replicates while the fading trace stays fixed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream domains. Values are part of the determinism contract; do not reorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    TaskGen = 1,
    Partition = 2,
    ModelInit = 3,
    Distance = 4,
    Channel = 5,
    Noise = 6,
    Batch = 7,
    Attack = 8,
    InitClusters = 9,
    Oracle = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream for (seed, domain, a, b).
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ splitmix64(domain as u64);
    state = splitmix64(state ^ splitmix64(a.wrapping_mul(0x9e3779b97f4a7c15)));
    state = splitmix64(state ^ splitmix64(b.wrapping_add(0x6a09e667f3bcc909)));
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a: ChaCha12Rng = stream(7, Domain::Channel, 3, 0);
        let mut b: ChaCha12Rng = stream(7, Domain::Channel, 3, 0);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }

    #[test]
    fn streams_differ_across_keys() {
        let mut base: ChaCha12Rng = stream(7, Domain::Channel, 3, 0);
        let firsts: Vec<u64> = vec![
            stream(8, Domain::Channel, 3, 0).gen(),
            stream(7, Domain::Noise, 3, 0).gen(),
            stream(7, Domain::Channel, 4, 0).gen(),
            stream(7, Domain::Channel, 3, 1).gen(),
        ];
        let b0: u64 = base.gen();
        for f in firsts {
            assert_ne!(b0, f);
        }
    }
}
