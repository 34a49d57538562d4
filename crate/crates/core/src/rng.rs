//! Seed derivation and per-node random streams.
//!
//! Every stream is a ChaCha8 generator whose seed is a SplitMix64-style mix of
//! its identifying parts, so streams for distinct (seed, node) pairs are
//! independent and reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::NodeId;

/// The concrete generator used for every stream.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags keeping protocol and adversary streams apart.
pub const DOMAIN_NODE: u64 = 0x6e6f_6465;
pub const DOMAIN_ADVERSARY: u64 = 0x6164_7673;
pub const DOMAIN_TRIAL: u64 = 0x7472_6961;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from an ordered list of parts.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |acc, &p| mix64(acc.wrapping_add(GOLDEN) ^ mix64(p.wrapping_add(GOLDEN))))
}

/// Seed of trial `index` at size `n` in a sweep rooted at `master`.
pub fn trial_seed(master: u64, n: usize, index: u64) -> u64 {
    derive_seed(&[DOMAIN_TRIAL, master, n as u64, index])
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Private coins of every node in one trial, created on first use.
pub struct NodeStreams {
    trial_seed: u64,
    streams: Vec<Option<StreamRng>>,
}

impl NodeStreams {
    pub fn new(trial_seed: u64, n: usize) -> Self {
        NodeStreams { trial_seed, streams: (0..n).map(|_| None).collect() }
    }

    pub fn get(&mut self, node: NodeId) -> &mut StreamRng {
        let seed = self.trial_seed;
        self.streams[node.index()].get_or_insert_with(|| stream(derive_seed(&[DOMAIN_NODE, seed, node.0 as u64])))
    }
}
