use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based random stream: the same `(seed, stream)` pair always yields
/// the same sequence, independent of how many other streams exist or in what
/// order they are consumed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(0);
    rng
}

/// Stream id for pulse `pulse` at angle index `angle`.
pub fn pulse_stream(angle: usize, pulse: u64) -> u64 {
    ((angle as u64) << 40) | (pulse & ((1 << 40) - 1))
}

/// Stream id for bootstrap replicate `replicate`; disjoint from pulse streams.
pub fn replicate_stream(replicate: usize) -> u64 {
    (1 << 63) | replicate as u64
}
