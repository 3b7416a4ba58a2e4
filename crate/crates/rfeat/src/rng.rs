//! Deterministic, splittable random number streams.
//!
//! Every stochastic routine in the crate draws from an [`RngStream`]: a
//! ChaCha8 generator keyed by `(seed, stream id, counter)`. Two properties
//! matter for reproducibility:
//!
//! * **Keyed streams.** `RngStream::new(seed, s)` and
//!   `RngStream::new(seed, t)` are statistically independent for `s ≠ t`, so
//!   per-sample work can draw from its own stream instead of sharing one
//!   sequential generator. Results then do not depend on iteration order or
//!   thread count.
//! * **Cheap splitting.** [`RngStream::substream`] derives a child stream
//!   from `(stream id, child index)` without consuming randomness from the
//!   parent, so the parent's sequence is unchanged by how many children were
//!   split off.
//!
//! The ChaCha counter is the third key component: restarting a stream always
//! reproduces the same sequence from position zero.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer; used to mix stream ids so that related
/// `(stream, child)` pairs land on unrelated ChaCha streams.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream keyed by `(seed, stream id, counter)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Creates the stream `stream` of the generator family keyed by `seed`,
    /// positioned at counter zero.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// The seed this stream was keyed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream id this stream was keyed with.
    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives child stream `child` of this stream.
    ///
    /// The child's stream id mixes `(self.stream, child)` through SplitMix64,
    /// so nested splits (`substream(i).substream(j)`) do not collide for
    /// practical workloads. The parent is not advanced.
    pub fn substream(&self, child: u64) -> Self {
        let mixed = splitmix64(self.stream ^ splitmix64(child.wrapping_add(1)));
        Self::new(self.seed, mixed)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Normal draw with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Vector of `d` i.i.d. standard normal draws.
    pub fn standard_normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.standard_normal()).collect()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        self.rng.gen_range(0..n)
    }

    /// Uniform random sign, `−1.0` or `+1.0`.
    pub fn sign(&mut self) -> f64 {
        if self.rng.gen::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher–Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Uniform draw from the unit sphere in `d` dimensions (`d ≥ 1`).
    ///
    /// Rejection-free: a standard normal vector is normalized; the all-zero
    /// draw has probability zero and is guarded by resampling.
    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        assert!(d >= 1, "unit vector needs d >= 1");
        loop {
            let v = self.standard_normal_vec(d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
