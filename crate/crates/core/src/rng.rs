//! Deterministic random streams.
//!
//! Every consumer derives its generator from `(seed, domain, index)` so results never depend on
//! the order in which samples are produced.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep unrelated consumers of the same seed independent.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Domain {
    Degradation = 1,
    LowLight = 2,
    Batch = 3,
    Init = 4,
    Scene = 5,
    Extractor = 6,
    Bench = 7,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((domain as u64) << 56));
    rng.set_stream(index);
    rng
}
