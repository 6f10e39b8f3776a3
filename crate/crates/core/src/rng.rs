//! Counter-based randomness keyed by tree labels.
//!
//! Every node of a branching tree gets its own generator, seeded from a key
//! derived from `(seed, stream, label)`. The realized tree is therefore a
//! deterministic function of those three things alone: samples can run on any
//! number of workers, a tree simulated to horizon `T` restricts exactly to the
//! tree simulated to any `t < T`, and the descendants of a node use randomness
//! disjoint from every other branch.

use rand::rngs::SmallRng;
use rand::SeedableRng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key identifying one node's randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
    /// Sanity-inversion mode: the second branching child reuses the first
    /// child's randomness, so sibling subtrees are maximally dependent.
    shared_children: bool,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            shared_children: false,
        }
    }

    pub fn with_shared_children(mut self) -> Self {
        self.shared_children = true;
        self
    }

    pub fn shares_children(&self) -> bool {
        self.shared_children
    }

    pub fn root_key(&self) -> NodeKey {
        NodeKey(mix(mix(self.seed ^ GOLDEN) ^ self.stream.wrapping_mul(STREAM_SALT)))
    }

    /// Key of child `digit ∈ {0, 1, 2}` of the node keyed `parent`.
    pub fn child_key(&self, parent: NodeKey, digit: u8) -> NodeKey {
        let digit = if self.shared_children && digit == 2 { 1 } else { digit };
        NodeKey(mix(parent.0.wrapping_add(GOLDEN.wrapping_mul(u64::from(digit) + 1))))
    }

    pub fn node_rng(&self, key: NodeKey) -> SmallRng {
        SmallRng::seed_from_u64(key.0)
    }
}
