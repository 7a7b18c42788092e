//! Counter-based random streams.
//!
//! Every replicate draws from its own ChaCha8 stream: the key holds the run
//! seed and the stream id, the 64-bit ChaCha stream selector holds the
//! replicate index. A replicate's numbers therefore depend only on
//! `(seed, stream, replicate)`, never on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the estimators, so that different consumers sharing a
/// seed never reuse each other's numbers.
pub mod streams {
    pub const SAMPLE: u64 = 0;
    pub const PICKANDS: u64 = 1;
    pub const PITERBARG: u64 = 2;
    pub const EXCEEDANCE: u64 = 3;
    pub const MVN_SHIFTS: u64 = 4;
    pub const SUPREMUM: u64 = 5;
    pub const ORTHANT_FALLBACK: u64 = 6;
    /// Choice of mixture component in importance samplers.
    pub const MIXTURE: u64 = 7;
}

pub fn replicate_rng(seed: u64, stream: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(b"vgx-rng1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate);
    rng
}
