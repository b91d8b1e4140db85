//! Keyed random substreams.
//!
//! A stream is a seed plus a path of integer keys, e.g. `(task, step, frame)`.
//! Each path is hashed into a ChaCha8 key, so the numbers drawn for a given
//! path never depend on what other paths were consumed or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    state: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: splitmix(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Substream for one more key component.
    pub fn child(&self, key: u64) -> Self {
        Self {
            seed: self.seed,
            state: splitmix(self.state ^ splitmix(key.wrapping_add(0x632B_E59B_D9B4_E019))),
        }
    }

    pub fn keyed(&self, keys: &[u64]) -> Self {
        keys.iter().fold(*self, |s, &k| s.child(k))
    }

    /// Generator positioned at the start of this substream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut z = self.state;
        for chunk in key.chunks_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
