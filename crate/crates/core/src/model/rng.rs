use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that get independent random streams from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Sample = 3,
    Synth = 4,
    Eval = 5,
}

/// Generator keyed by `(seed, stream, a, b)`; distinct keys give independent streams.
pub fn stream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_mut(8).zip([seed, stream as u64, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
