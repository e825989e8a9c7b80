//! Deterministic random substreams.
//!
//! Every random quantity in the crate is drawn from a [`StreamKey`]: a 64-bit
//! master seed refined by a path of integer indices (cell, replication,
//! bootstrap draw, ...). A key is turned into a generator by expanding it with
//! SplitMix64 into a 256-bit ChaCha8 key. Two keys with different paths give
//! statistically independent streams, and the output of a stream depends only
//! on its path, never on thread scheduling.
//!
//! Algorithm name, for reproduction in other languages: `splitmix64-chacha8`.
//! `child(i)` maps state `s` to `mix(s ^ mix(i + 0x9E3779B97F4A7C15))`, where
//! `mix` is the SplitMix64 finalizer; the ChaCha8 seed is the little-endian
//! concatenation of four successive SplitMix64 outputs started at `s`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator type handed out by [`StreamKey::rng`].
pub type StreamRng = ChaCha8Rng;

pub const ALGORITHM: &str = "splitmix64-chacha8";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Addressable position in the tree of random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix(seed.wrapping_add(GOLDEN)))
    }

    /// Key of the `index`-th child stream.
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(index.wrapping_add(GOLDEN))))
    }

    /// Key of a named child stream (labels are hashed with FNV-1a).
    pub fn named(self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            s = s.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix(s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let a: Vec<u64> = {
            let mut r = StreamKey::new(7).child(3).child(11).rng();
            (0..8).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = StreamKey::new(7).child(3).child(11).rng();
            (0..8).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_streams_differ() {
        let k = StreamKey::new(7);
        assert_ne!(k.child(0), k.child(1));
        assert_ne!(k.child(0).child(1), k.child(1).child(0));
        let x: u64 = k.child(0).rng().random();
        let y: u64 = k.child(1).rng().random();
        assert_ne!(x, y);
    }
}
