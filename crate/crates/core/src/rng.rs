use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded random stream.
///
/// Child streams are derived from the seed and a label path only, never from
/// how much of the parent has been consumed, so a stream for
/// `(master, agent, epoch)` is the same no matter which thread asks for it or
/// in what order.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, labels: &[u64]) -> Self {
        let mut s = splitmix64(self.seed ^ 0x6A09_E667_F3BC_C908);
        for &l in labels {
            s = splitmix64(s ^ splitmix64(l.wrapping_add(0x3C6E_F372_FE94_F82B)));
        }
        Self::new(s)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        self.rng.sample(rand_distr::Open01)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
