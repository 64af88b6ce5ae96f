//! Seeded random streams.
//!
//! A run owns one seed. Each consumer draws from its own ChaCha stream derived
//! from that seed, so enabling or disabling one component never shifts the
//! numbers another component sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Noise = 3,
    Head = 4,
    Synthesis = 5,
    Data = 6,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Init,
        Stream::Sampling,
        Stream::Noise,
        Stream::Head,
        Stream::Synthesis,
        Stream::Data,
    ];
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// The streams used during training, with resumable positions.
#[derive(Clone, Debug)]
pub struct RunRng {
    pub seed: u64,
    pub init: ChaCha20Rng,
    pub sampling: ChaCha20Rng,
    pub noise: ChaCha20Rng,
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            init: stream_rng(seed, Stream::Init),
            sampling: stream_rng(seed, Stream::Sampling),
            noise: stream_rng(seed, Stream::Noise),
        }
    }

    /// Word positions of (init, sampling, noise).
    pub fn positions(&self) -> [u128; 3] {
        [
            self.init.get_word_pos(),
            self.sampling.get_word_pos(),
            self.noise.get_word_pos(),
        ]
    }

    pub fn restore(seed: u64, positions: [u128; 3]) -> Self {
        let mut r = Self::new(seed);
        r.init.set_word_pos(positions[0]);
        r.sampling.set_word_pos(positions[1]);
        r.noise.set_word_pos(positions[2]);
        r
    }
}

/// `rows x cols` matrix of independent `N(0, sigma^2)` draws.
pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches length")
}
