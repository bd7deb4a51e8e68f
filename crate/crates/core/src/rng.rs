//! Seeded substreams for reproducible parallel Monte Carlo.
//!
//! Every draw in a simulation is addressed by a path of integers (cell,
//! replication, purpose, ...). The stream for a path depends only on the root
//! seed and the path, so results do not depend on how work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Path tags separating the consumers of a root seed.
pub(crate) mod domain {
    pub const BM: u64 = 0xB0;
    pub const SIM: u64 = 0x51;
    pub const BOOTSTRAP: u64 = 0xB5;
    pub const PILOT: u64 = 1;
    pub const MAIN: u64 = 2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, path: &[u64]) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(mix_path(path));
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_path(path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(path.len() as u64), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}
