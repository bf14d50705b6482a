//! Independent seeded random streams, so that e.g. pruning never shifts the
//! sequence a client trains with.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INIT: u64 = 1 << 60;
const PRUNE: u64 = 2 << 60;
const TRAIN: u64 = 3 << 60;
const PUSH: u64 = 4 << 60;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, INIT)
}

pub fn prune_rng(seed: u64, client: usize) -> ChaCha8Rng {
    stream(seed, PRUNE | client as u64)
}

pub fn train_rng(seed: u64, client: usize, round: usize, epoch: usize) -> ChaCha8Rng {
    stream(seed, TRAIN | (client as u64) << 40 | (round as u64) << 8 | epoch as u64)
}

pub fn push_rng(seed: u64, client: usize, round: usize) -> ChaCha8Rng {
    stream(seed, PUSH | (client as u64) << 40 | round as u64)
}
