//! Seed plumbing. Every random draw in the crate comes from a ChaCha8
//! stream derived from one user seed plus a fixed stream id, so results
//! are reproducible across platforms and independent of call order
//! between components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const SYNTH: u64 = 1;
    pub const SYNTH_LABELS: u64 = 2;
    pub const ENCODER_INIT: u64 = 10;
    pub const ENCODER_BATCHES: u64 = 11;
    /// Offset by the term index.
    pub const CRITIC_INIT: u64 = 1_000;
    pub const CRITIC_BATCHES: u64 = 2_000;
    pub const DP_NOISE: u64 = 60;
    pub const PROBE: u64 = 70;
    pub const TSNE: u64 = 80;
    pub const MI_EVAL: u64 = 90;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, s| seeded(seed, s).random::<u64>();
        assert_eq!(draw(4, stream::SYNTH), draw(4, stream::SYNTH));
        assert_ne!(draw(4, stream::SYNTH), draw(4, stream::SYNTH_LABELS));
        assert_ne!(draw(4, stream::SYNTH), draw(5, stream::SYNTH));
    }
}
