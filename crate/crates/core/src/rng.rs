//! Seedable, order-independent randomness.
//!
//! Every trajectory owns labelled substreams keyed by
//! `(master_seed, trajectory_index, stream_label)`. The key is hashed with
//! SplitMix64 into a 256-bit ChaCha8 key, so a substream depends on nothing
//! but its own key: not on how many other substreams exist, nor on the order
//! in which workers create them. Gaussians come from the ziggurat sampler of
//! `rand_distr::StandardNormal` (fixed for a given `rand_distr` release).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::truncation::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    /// Increments of the driving Brownian motion `W`.
    SchemeNoise,
    /// The Brownian motion used for random initial segments.
    InitialData,
    /// Seeded subsampling and probe selection.
    Subsample,
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::SchemeNoise => 0x5343_4845_4d45_0001,
            StreamLabel::InitialData => 0x494e_4954_4941_0002,
            StreamLabel::Subsample => 0x5355_4253_414d_0003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub trajectory_index: u64,
    pub stream_label: StreamLabel,
}

impl SeedSpec {
    pub fn new(master_seed: u64, trajectory_index: u64, stream_label: StreamLabel) -> Self {
        Self {
            master_seed,
            trajectory_index,
            stream_label,
        }
    }

    pub fn scheme_noise(master_seed: u64, trajectory_index: u64) -> Self {
        Self::new(master_seed, trajectory_index, StreamLabel::SchemeNoise)
    }

    pub fn initial_data(master_seed: u64, trajectory_index: u64) -> Self {
        Self::new(master_seed, trajectory_index, StreamLabel::InitialData)
    }

    /// Same trajectory, different stream.
    pub fn with_label(self, stream_label: StreamLabel) -> Self {
        Self { stream_label, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = splitmix(self.master_seed ^ 0x9e37_79b9_7f4a_7c15);
        state = splitmix(state ^ self.trajectory_index);
        state = splitmix(state ^ self.stream_label.tag());
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent master seed for a named sub-experiment.
pub fn derive_seed(master_seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(master_seed) ^ h)
}

/// Streaming source of `N(0, dt I_m)` increments.
#[derive(Debug, Clone)]
pub struct BrownianIncrements {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl BrownianIncrements {
    pub fn new(seed: &SeedSpec, dt: f64) -> Self {
        Self {
            rng: seed.rng(),
            sqrt_dt: dt.sqrt(),
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = self.sqrt_dt * z;
        }
    }
}

/// `count` i.i.d. `N(0, dt I_m)` vectors; the same sequence the scheme
/// consumes for this seed.
pub fn brownian_increments(seed: &SeedSpec, m: usize, dt: f64, count: usize) -> Vec<Vec<f64>> {
    let mut src = BrownianIncrements::new(seed, dt);
    (0..count)
        .map(|_| {
            let mut v = vec![0.0; m];
            src.fill(&mut v);
            v
        })
        .collect()
}

/// Brownian initial segment `xi(theta) = B(-theta)` at the grid nodes.
///
/// Entry `j` holds `xi(-tau + j dt)`; the last entry (`theta = 0`) is zero.
/// The path is drawn from the seed's own stream, so pass a
/// [`StreamLabel::InitialData`] seed to keep it independent of the scheme noise.
pub fn brownian_initial_path(seed: &SeedSpec, d: usize, grid: &Grid) -> Vec<Vec<f64>> {
    let n = grid.delay_steps();
    let mut src = BrownianIncrements::new(seed, grid.dt());
    let mut out = vec![vec![0.0; d]; n + 1];
    let mut inc = vec![0.0; d];
    for j in (0..n).rev() {
        src.fill(&mut inc);
        let (head, tail) = out.split_at_mut(j + 1);
        for ((a, b), w) in head[j].iter_mut().zip(&tail[0]).zip(&inc) {
            *a = b + w;
        }
    }
    out
}
