//! Counter-derived random substreams: one root seed, one ChaCha stream per
//! path, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn substream(seed: u64, stream: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for path `index` of experiment block `block`.
pub fn stream_id(block: u32, index: u32) -> u64 {
    (u64::from(block) << 32) | u64::from(index)
}
