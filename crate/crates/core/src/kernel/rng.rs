//! Per-path random streams.
//!
//! Every path index gets its own ChaCha stream under the run seed, so a path's
//! draws do not depend on which thread or chunk generated it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream for `path` under `seed`.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}
