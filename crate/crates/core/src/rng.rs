//! Seed splitting.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by the
//! run seed and a fixed stream id, so no generator state is ever shared
//! between unrelated consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_GROUND_TRUTH: u64 = 1;
pub const STREAM_FEATURES: u64 = 2;
pub const STREAM_LABELS: u64 = 3;
pub const STREAM_SHUFFLE: u64 = 4;
pub const STREAM_PROBES: u64 = 5;
/// First stream id free for callers outside this crate.
pub const STREAM_USER: u64 = 1 << 32;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
