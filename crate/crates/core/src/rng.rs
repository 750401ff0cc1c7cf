//! Counter-based random substreams.
//!
//! Every random draw in a simulation is addressed by `(seed, worker, purpose,
//! step)`. The master seed keys a ChaCha8 generator, `(worker, purpose)`
//! selects one of its 2^64 streams, and the step index positions the stream's
//! block counter. Draws therefore do not depend on the order in which workers
//! are evaluated, and any single draw can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::vector::DenseVector;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    /// Stochastic-gradient noise (mini-batch choice, additive noise, ...).
    BatchNoise = 1,
    /// Local differential-privacy noise.
    DpNoise = 2,
}

/// Words reserved for each step: 2^32 words = 16 GiB of randomness per
/// (worker, purpose, step), far above any single draw.
const WORDS_PER_STEP_LOG2: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    worker: u32,
    purpose: Purpose,
}

impl RngStream {
    pub fn new(seed: u64, worker: usize, purpose: Purpose) -> Self {
        Self {
            seed,
            worker: u32::try_from(worker).expect("worker index fits in u32"),
            purpose,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn worker(&self) -> usize {
        self.worker as usize
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    fn stream_id(&self) -> u64 {
        ((self.worker as u64) << 8) | self.purpose as u64
    }

    /// Generator positioned at the start of step `t`'s block of this stream.
    pub fn at(&self, t: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng.set_word_pos(u128::from(t) << WORDS_PER_STEP_LOG2);
        rng
    }

    /// `d` i.i.d. N(0, sigma^2) samples drawn at step `t`.
    pub fn gaussian_vector<T: Scalar>(&self, t: u64, d: usize, sigma: T) -> DenseVector<T> {
        gaussian_vector(&mut self.at(t), d, sigma)
    }
}

/// `d` i.i.d. N(0, sigma^2) samples. `sigma = 0` returns the zero vector
/// without consuming randomness.
pub fn gaussian_vector<T: Scalar, R: rand::Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    sigma: T,
) -> DenseVector<T> {
    if sigma == T::zero() {
        return DenseVector::zeros(d);
    }
    DenseVector::from_vec((0..d).map(|_| sigma * T::standard_normal(rng)).collect())
}
