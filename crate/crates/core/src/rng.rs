//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit seed is a hash of the
//! master seed and a path of `(purpose, replica)` labels. Streams can
//! therefore be created in any order, on any worker, and always produce the
//! same draws for the same key.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose tags for derived streams.
pub mod purpose {
    pub const SERIAL: u64 = 1;
    pub const REPLICA: u64 = 2;
    pub const DEPHASE: u64 = 3;
    pub const DECORRELATION: u64 = 4;
    pub const PARALLEL_STEP: u64 = 5;
    pub const WALL_CLOCK: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const REPETITION: u64 = 8;
    pub const EPOCH: u64 = 9;
    pub const RESTART: u64 = 10;
    pub const BRANCHING: u64 = 11;
    pub const SEGMENT: u64 = 12;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub replica: u64,
    pub purpose: u64,
}

impl StreamId {
    pub fn new(purpose: u64, replica: u64) -> Self {
        StreamId { replica, purpose }
    }
}

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    id: StreamId,
    key: [u64; 4],
    inner: ChaCha8Rng,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn absorb(words: &[u64]) -> [u64; 4] {
    let mut state = 0x6A09_E667_F3BC_C908u64;
    for &w in words {
        state = splitmix64(state ^ w);
    }
    let mut key = [0u64; 4];
    for slot in key.iter_mut() {
        state = splitmix64(state);
        *slot = state;
    }
    key
}

fn seed_bytes(key: &[u64; 4]) -> [u8; 32] {
    let mut seed = [0u8; 32];
    for (chunk, word) in seed.chunks_exact_mut(8).zip(key) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    seed
}

impl RngStream {
    pub fn new(master_seed: u64, id: StreamId) -> Self {
        let key = absorb(&[master_seed, id.purpose, id.replica]);
        RngStream {
            master_seed,
            id,
            key,
            inner: ChaCha8Rng::from_seed(seed_bytes(&key)),
        }
    }

    /// Root stream for a master seed.
    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, StreamId::new(0, 0))
    }

    /// Child stream keyed by this stream's key and `(purpose, replica)`.
    /// Independent of how many draws the parent has consumed.
    pub fn derive(&self, purpose: u64, replica: u64) -> RngStream {
        let key = absorb(&[
            self.key[0],
            self.key[1],
            self.key[2],
            self.key[3],
            purpose,
            replica,
        ]);
        RngStream {
            master_seed: self.master_seed,
            id: StreamId::new(purpose, replica),
            key,
            inner: ChaCha8Rng::from_seed(seed_bytes(&key)),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
