//! Seeded random streams. Every parallel task draws from its own ChaCha
//! stream keyed by `(seed, task)`, so results depend only on the seed and the
//! task count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn substream(seed: u64, task: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(task);
    r
}

/// Split `total` items into `tasks` contiguous chunk sizes, larger chunks first.
pub fn chunk_sizes(total: usize, tasks: usize) -> Vec<usize> {
    let tasks = tasks.max(1);
    let base = total / tasks;
    let extra = total % tasks;
    (0..tasks).map(|t| base + usize::from(t < extra)).collect()
}
