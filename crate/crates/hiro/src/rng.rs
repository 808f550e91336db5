//! Named, seed-derived random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `name` derived from the global `seed`.
///
/// ```
/// use rand::Rng;
/// let mut a = hiro::rng::substream(42, "training");
/// let mut b = hiro::rng::substream(42, "training");
/// assert_eq!(a.random::<u64>(), b.random::<u64>());
/// ```
pub fn substream(seed: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
