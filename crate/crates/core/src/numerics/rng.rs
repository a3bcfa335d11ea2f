//! Seeded, splittable random streams.
//!
//! Every stochastic routine in this crate draws from a [`RngStream`]: a
//! (seed, stream id) pair backed by ChaCha12. The seed keys the generator and
//! the 64-bit stream id selects an independent stream under that key, so a
//! stream can be split into per-prompt or per-epoch substreams that are safe
//! to consume in parallel. Identical (seed, stream id) pairs replay the same
//! sample sequence bit-for-bit across runs and platforms.
//!
//! Gaussian draws use the rand_distr `StandardNormal` ziggurat sampler; this
//! choice is fixed so that replay stays bit-identical.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Concrete generator materialized from a [`RngStream`].
pub type StreamRng = ChaCha12Rng;

/// A value-semantics handle for one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

impl RngStream {
    /// Root stream for a seed.
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Derive an independent child stream. Children with distinct ids, and
    /// children of distinct parents, land on distinct ChaCha streams.
    pub fn substream(&self, id: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(id)),
        }
    }

    /// Materialize the generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// splitmix64 finalizer; bijective on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal vector.
pub fn normal_vector<R: Rng>(rng: &mut R, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Standard normal matrix, filled in row-major order.
pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

/// In-place Fisher-Yates shuffle (descending scan, unbiased).
pub fn shuffle<R: Rng, T>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_replays_bit_identically() {
        let s = RngStream::new(7).substream(3);
        let a = normal_vector(&mut s.rng(), 64);
        let b = normal_vector(&mut s.rng(), 64);
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_differ_from_parent_and_siblings() {
        let root = RngStream::new(7);
        let a = normal_vector(&mut root.substream(0).rng(), 32);
        let b = normal_vector(&mut root.substream(1).rng(), 32);
        let c = normal_vector(&mut root.rng(), 32);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn distinct_seeds_decorrelate() {
        let a = normal_vector(&mut RngStream::new(1).rng(), 32);
        let b = normal_vector(&mut RngStream::new(2).rng(), 32);
        assert_ne!(a, b);
    }

    #[test]
    fn nested_substream_ids_do_not_collide() {
        // Hash-derived ids for a realistic (parent, child) fan-out stay unique.
        let root = RngStream::new(0);
        let mut seen = std::collections::HashSet::new();
        for i in 0..200 {
            let child = root.substream(i);
            assert!(seen.insert(child.stream_id()));
            for j in 0..50 {
                assert!(seen.insert(child.substream(j).stream_id()));
            }
        }
    }

    #[test]
    fn shuffle_is_a_permutation_and_deterministic() {
        let mut a: Vec<usize> = (0..100).collect();
        let mut b: Vec<usize> = (0..100).collect();
        shuffle(&mut RngStream::new(3).substream(9).rng(), &mut a);
        shuffle(&mut RngStream::new(3).substream(9).rng(), &mut b);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, (0..100).collect::<Vec<_>>());
    }
}
