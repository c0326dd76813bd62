use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible random stream: ChaCha8 keyed by `seed`, with `stream`
/// selecting the ChaCha stream id.
///
/// Child handles derived with [`RngHandle::derive`] give independent,
/// deterministic sub-streams, so parallel work can be partitioned without
/// changing results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        RngHandle { seed, stream }
    }

    pub fn derive(&self, index: u64) -> Self {
        RngHandle { seed: self.seed, stream: splitmix64(splitmix64(self.stream) ^ index) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
