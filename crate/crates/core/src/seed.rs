//! Root-seed splitting.
//!
//! Every random stream in the pipeline is derived from a single root seed:
//!
//! ```text
//! s0 = splitmix64(root)
//! s1 = splitmix64(s0 ^ splitmix64(stream_tag))
//! sN = splitmix64(s(N-1) ^ splitmix64(index_N))     for each index in the path
//! rng = ChaCha8Rng::seed_from_u64(sN)
//! ```
//!
//! Streams are keyed by purpose (trajectories, labels, training, ...) and an
//! index path (trajectory id, time index, iteration), so results never depend
//! on evaluation order or on how work is split between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used for every stream.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    /// Nominal rollouts, indexed by trajectory id.
    Trajectory,
    /// Fallback labeling rollouts, indexed by (trajectory id, time index).
    Label,
    /// Network initialization, indexed by training round.
    Init,
    /// Mini-batch shuffling, indexed by training round.
    Shuffle,
    /// Domain-randomization draws, indexed by trajectory id or grid cell.
    DomainRandomization,
    /// Grid-oracle rollouts, indexed by cell.
    Grid,
    /// Class-balancing subsamples.
    Subsample,
    /// Held-out evaluation data.
    Evaluation,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Trajectory => 1,
            Stream::Label => 2,
            Stream::Init => 3,
            Stream::Shuffle => 4,
            Stream::DomainRandomization => 5,
            Stream::Grid => 6,
            Stream::Subsample => 7,
            Stream::Evaluation => 8,
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream factory rooted at one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derived 64-bit seed for `stream` at the given index path.
    pub fn seed(&self, stream: Stream, path: &[u64]) -> u64 {
        let mut s = splitmix64(splitmix64(self.root) ^ splitmix64(stream.tag()));
        for &i in path {
            s = splitmix64(s ^ splitmix64(i));
        }
        s
    }

    pub fn rng(&self, stream: Stream, path: &[u64]) -> StreamRng {
        StreamRng::seed_from_u64(self.seed(stream, path))
    }

    /// A child tree, used to give independent experiments disjoint streams.
    pub fn child(&self, index: u64) -> SeedTree {
        SeedTree::new(splitmix64(self.root ^ splitmix64(index.wrapping_add(0x5eed))))
    }
}
