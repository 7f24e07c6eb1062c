//! Stream derivation: every replica gets its own ChaCha stream keyed by
//! (master seed, purpose tag, index path).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, fixed so that tags hash identically on every platform.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent stream from a seed, a purpose tag and an index path.
pub fn stream(master_seed: u64, tag: &str, path: &[u64]) -> Stream {
    let mut state = splitmix64(master_seed ^ splitmix64(tag_hash(tag)));
    for &i in path {
        state = splitmix64(state ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// A master seed bound to a tag, handing out per-index streams.
#[derive(Debug, Clone)]
pub struct Streams {
    seed: u64,
    tag: String,
}

impl Streams {
    pub fn new(seed: u64, tag: impl Into<String>) -> Self {
        Self { seed, tag: tag.into() }
    }

    pub fn get(&self, path: &[u64]) -> Stream {
        stream(self.seed, &self.tag, path)
    }

    pub fn child(&self, sub: &str) -> Streams {
        Streams { seed: self.seed, tag: format!("{}/{}", self.tag, sub) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
