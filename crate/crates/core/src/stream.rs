//! Keyed random streams.
//!
//! Every random draw in the crate comes from a [`StreamId`]: a master seed, a
//! trial key and a purpose tag. The triple is hashed into a ChaCha8 seed, so a
//! stream never depends on how many values another stream consumed and
//! parallel trials are reproducible in any schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes give independent streams
/// for the same (seed, trial).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Sample,
    Oracle,
    Solver,
    Selector,
    Assumption,
    Probe,
    Rearrangement,
    Ensemble,
}

impl Purpose {
    fn tag(self) -> u8 {
        match self {
            Purpose::Sample => 1,
            Purpose::Oracle => 2,
            Purpose::Solver => 3,
            Purpose::Selector => 4,
            Purpose::Assumption => 5,
            Purpose::Probe => 6,
            Purpose::Rearrangement => 7,
            Purpose::Ensemble => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub trial: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(master_seed: u64, trial: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            trial,
            purpose,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn with_trial(self, trial: u64) -> Self {
        Self { trial, ..self }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(b"marginals/stream/v1");
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.trial.to_le_bytes());
        hasher.update([self.purpose.tag()]);
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

/// Folds a list of integers into one trial key (e.g. `(n, N, trial_id)`).
pub fn trial_key(parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"marginals/key/v1");
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}
