//! 64-bit Bloom filters over handle ids, hashed by simple tabulation.

use rand::rngs::SmallRng;
use rand::{RngCore, SeedableRng};

const TABLES: usize = 8;

/// Simple tabulation hash over the 8 bytes of a 64-bit value.
#[derive(Clone)]
pub struct TabulationHash {
    table: Box<[[u64; 256]; TABLES]>,
}

impl TabulationHash {
    pub fn new(seed: u64) -> Self {
        let mut rng = SmallRng::seed_from_u64(seed);
        let mut table = Box::new([[0u64; 256]; TABLES]);
        for row in table.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.next_u64();
            }
        }
        Self { table }
    }

    pub fn hash(&self, x: u64) -> u64 {
        x.to_le_bytes()
            .iter()
            .zip(self.table.iter())
            .fold(0, |h, (&b, row)| h ^ row[b as usize])
    }
}

/// Maps handle ids to two-bit Bloom masks.
#[derive(Clone)]
pub struct BloomHasher {
    h1: TabulationHash,
    h2: TabulationHash,
}

impl BloomHasher {
    pub fn new(seed: u64) -> Self {
        Self {
            h1: TabulationHash::new(seed),
            h2: TabulationHash::new(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// Filter containing only `id`.
    pub fn mask(&self, id: u64) -> u64 {
        (1 << (self.h1.hash(id) % 64)) | (1 << (self.h2.hash(id) % 64))
    }

    pub fn contains(filter: u64, mask: u64) -> bool {
        mask != 0 && filter & mask == mask
    }
}
