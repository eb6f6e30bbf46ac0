//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random draw in a simulation comes from a stream identified by a path
//! of integers below one master seed, e.g. `(master, TRIAL, 3, BLOCK, 1042,
//! CHANNEL)`. Streams are derived by hashing the path with SplitMix64, so a
//! trial or block can be reproduced without replaying any other one and
//! parallel execution sees exactly the same numbers as sequential execution.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

pub const PLACEMENT: u64 = 0x706c_6163;
pub const TRIAL: u64 = 0x7472_6961;
pub const BLOCK: u64 = 0x626c_6f63;
pub const CHANNEL: u64 = 0x6368_616e;
pub const CONSUMPTION: u64 = 0x636f_6e73;
pub const POLICY: u64 = 0x706f_6c69;
pub const STUDY: u64 = 0x7374_7564;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(master: u64) -> Self {
        SeedKey(splitmix64(master))
    }

    #[inline]
    pub fn child(self, tag: u64) -> Self {
        SeedKey(splitmix64(
            self.0 ^ splitmix64(tag.wrapping_add(self.0.rotate_left(17))),
        ))
    }

    #[inline]
    pub fn path(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |key, &t| key.child(t))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}
