//! Seeded randomness.
//!
//! Every stochastic stage draws from a counter-based ChaCha8 generator keyed
//! by the experiment seed plus a stage-specific stream id, so runs are fully
//! reproducible and stages never share a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Stream ids for the pipeline stages. Per-class stages add the class index.
pub mod streams {
    pub const SYNTH_DATA: u64 = 0x01;
    pub const SPLITS: u64 = 0x02;
    /// Network init for class `y` uses `NET_INIT + y`.
    pub const NET_INIT: u64 = 0x100;
    /// Minibatch shuffling for class `y` uses `TRAIN_SHUFFLE + y`.
    pub const TRAIN_SHUFFLE: u64 = 0x200;
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// One standard-normal pair via Box-Muller.
///
/// Draws happen in `f64` and are narrowed afterwards, so the stream of
/// variates is identical for every scalar type.
pub fn normal_pair<T: Scalar, R: Rng>(r: &mut R) -> (T, T) {
    let u1: f64 = 1.0 - r.random::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = r.random::<f64>();
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (T::of(radius * c), T::of(radius * s))
}

/// `n` standard-normal draws.
pub fn standard_normals<T: Scalar, R: Rng>(r: &mut R, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    while out.len() + 2 <= n {
        let (a, b) = normal_pair::<T, R>(r);
        out.push(a);
        out.push(b);
    }
    if out.len() < n {
        out.push(normal_pair::<T, R>(r).0);
    }
    out
}

/// A seeded permutation of `0..n`.
pub fn shuffled_indices<R: Rng>(r: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(r);
    idx
}
