//! File formats, episode runner, evaluation campaigns and plotting on top of
//! `shipsafe-core`.

pub mod artifact;
pub mod campaign;
pub mod config;
pub mod external;
pub mod output;
pub mod runner;
pub mod svg;

use std::time::Instant;

use sha2::{Digest, Sha256};
use shipsafe_core::psf::Clock;

/// Monotonic wall clock for solve-time measurement.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Seed of episode `index` in a campaign seeded with `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..100).map(|i| episode_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(seeds[3], episode_seed(7, 3));
        assert_ne!(episode_seed(7, 3), episode_seed(8, 3));
    }
}
