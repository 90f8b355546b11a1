//! Reproducible random streams.
//!
//! Every stochastic object in the crate draws from an [`RngStream`] named by a
//! `(master_seed, stream_index)` pair. The pair selects a ChaCha8 key (from the
//! master seed) and one of its 2^64 independent streams, so replica `i` of an
//! experiment always sees the same numbers no matter how many workers run or
//! in which order replicas are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// A child stream keyed by this stream's identity (not its position), so
    /// `derive(j)` is the same whether or not numbers were drawn before.
    pub fn derive(&self, child: u64) -> RngStream {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream_index ^ 0x5bd1_e995));
        RngStream::new(key, child)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Mixes a seed and a label into a fresh master seed. Used to give independent
/// experiment parts (environments, walks, bootstrap) their own key space.
pub fn seed_for(master_seed: u64, label: u64) -> u64 {
    splitmix64(master_seed.wrapping_add(splitmix64(label)))
}

/// Labels passed to [`seed_for`] so that one master seed names the same
/// environments in every experiment, independent of the walk or resampling
/// streams drawn alongside them.
pub const ENV_LABEL: u64 = 1;
pub const WALK_LABEL: u64 = 2;
pub const RESAMPLE_LABEL: u64 = 3;

/// Stream of replica `index` within the part of an experiment named `label`.
pub fn replica_stream(master_seed: u64, label: u64, index: u64) -> RngStream {
    RngStream::new(seed_for(master_seed, label), index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Exponential waiting time with the given total rate.
pub(crate) fn exp_time<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // midpoint of one of 2^53 cells in (0, 1), so the time is strictly positive
    let bits = rng.next_u64() >> 11;
    let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    -u.ln() / rate
}

/// Uniform integer in `0..n` (n > 0), by Lemire's widening multiply.
pub(crate) fn below<R: RngCore + ?Sized>(rng: &mut R, n: u64) -> u64 {
    debug_assert!(n > 0);
    let mut m = (rng.next_u64() as u128) * (n as u128);
    let mut low = m as u64;
    if low < n {
        let threshold = n.wrapping_neg() % n;
        while low < threshold {
            m = (rng.next_u64() as u128) * (n as u128);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}
