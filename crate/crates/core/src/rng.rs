//! Named, counter-derived random streams.
//!
//! A single root seed fans out into independent ChaCha8 streams addressed by
//! `(purpose, worker, round)`. Draws made for one purpose never shift the
//! draws of another, so algorithm variants that consume randomness in
//! different amounts stay aligned wherever their sampling coincides.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// The restart coin `u^{k+1}` drawn by worker 1.
    Coin,
    /// Dataset sharding.
    Shard,
    /// Samples for the big-batch gradient (`u^k = 1` rounds and initialization).
    BigBatch,
    /// The single sample used for gradient differences.
    Single,
    /// Compressor randomness. Shared with receivers, so random index sets
    /// never need to be transmitted.
    Compress,
    /// Problem construction (synthetic data, random initial points).
    Problem,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Coin => 1,
            Stream::Shard => 2,
            Stream::BigBatch => 3,
            Stream::Single => 4,
            Stream::Compress => 5,
            Stream::Problem => 6,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeder {
    root: u64,
}

impl StreamSeeder {
    pub fn new(root: u64) -> Self {
        StreamSeeder { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed(&self, stream: Stream, worker: usize, round: u64) -> [u8; 32] {
        let mut state = self.root;
        let mut mix = splitmix64(&mut state);
        for word in [stream.tag(), worker as u64, round] {
            state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93);
            mix ^= splitmix64(&mut state);
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).wrapping_add(mix).to_le_bytes());
        }
        seed
    }

    pub fn rng(&self, stream: Stream, worker: usize, round: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed(stream, worker, round))
    }
}
