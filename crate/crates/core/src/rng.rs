//! Seed plumbing. Every random draw in the crate comes from a ChaCha8
//! stream selected by `(seed, stream id)`, so results never depend on the
//! order in which windows or epochs are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for simulated windows live in their own range.
const WINDOW_DOMAIN: u64 = 1 << 62;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for simulated window `index`.
pub fn window_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(seed, WINDOW_DOMAIN | index as u64)
}

/// Generator for the update on `window` during `epoch`.
pub fn update_rng(seed: u64, epoch: usize, window: usize) -> ChaCha8Rng {
    stream_rng(seed, ((epoch as u64) << 32) | window as u64)
}
