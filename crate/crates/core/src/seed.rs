//! Deterministic seed derivation.
//!
//! Every random stream in the crate (data order, pretext shuffles, dropout
//! masks, initialization) is seeded from a root seed plus a path of integers,
//! so results never depend on scheduling or on how far another stream has
//! advanced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of stream identifiers.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(root), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(root, path))
}

/// Stream tags, kept distinct so that derived streams never collide.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const SYNTH_SUBJECT: u64 = 2;
    pub const SYNTH_EPOCH: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const EPOCH_ORDER: u64 = 6;
    pub const PRETEXT: u64 = 7;
    pub const DROPOUT: u64 = 8;
    pub const HEAD_INIT: u64 = 9;
    pub const EVAL_PRETEXT: u64 = 10;
    pub const POOL: u64 = 11;
    pub const FINETUNE: u64 = 12;
}
