//! Seeded, splittable random streams.
//!
//! Every independent task draws from its own ChaCha stream keyed by the master seed
//! and the task index, so results do not depend on how tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, task: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}
