use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one named stage of a seeded computation.
///
/// Stages draw from their own stream so that adding draws in one stage
/// never shifts the numbers seen by another.
pub fn substream(seed: u64, stage: &str) -> Rng {
    let mut h = splitmix(seed);
    for b in stage.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Like [`substream`] with an extra integer index (replicate, wave, ...).
pub fn indexed_substream(seed: u64, stage: &str, index: u64) -> Rng {
    let mut h = splitmix(seed);
    for b in stage.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(splitmix(h ^ splitmix(index)))
}

/// A child seed for a named stage, for APIs that take a plain seed.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = splitmix(seed);
    for b in stage.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ 0x5eed)
}
