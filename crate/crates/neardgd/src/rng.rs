//! Keyed random substreams.
//!
//! Every random draw in a simulated run comes from a substream addressed by
//! `(purpose, node, iteration, round)`. Substreams with distinct keys are
//! statistically independent (distinct ChaCha keys), and the same key always
//! reproduces the same sequence, so a run is bit-reproducible no matter how
//! its cells are scheduled. Gradient draws are keyed on the iterate index
//! only, which is what lets different methods sample the same mini-batches
//! at the same iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a substream is used for. Part of the substream key, so communication
/// noise and gradient noise never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Comm = 1,
    Grad = 2,
    Init = 3,
    Data = 4,
    Graph = 5,
    Objective = 6,
}

/// A master seed from which keyed substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    master: u64,
}

impl RngStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent generator for the given key. The four key words fill the
    /// ChaCha key directly; no hashing is involved.
    pub fn substream(&self, purpose: Purpose, node: u64, iteration: u64, round: u64) -> ChaCha12Rng {
        let words = [
            self.master,
            ((purpose as u64) << 48) | (node & 0xffff_ffff_ffff),
            iteration,
            round,
        ];
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
