//! The single seeded generator used for every random draw in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identity string recorded in run metadata.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

pub type HgmRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> HgmRng {
    ChaCha8Rng::seed_from_u64(seed)
}
