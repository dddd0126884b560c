use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Uniform draws feeding `-ln(-ln u)` are clamped to `[GUMBEL_CLAMP, 1 - GUMBEL_CLAMP]`.
pub const GUMBEL_CLAMP: f64 = 1e-12;

/// Seeded generator with derivable substreams.
///
/// The stream is ChaCha8 keyed by a 64-bit seed. Substreams are derived from
/// the *seed* (not from the current position) by SplitMix64 mixing of the
/// seed with a list of tags, so `rng.substream(&[epoch, user])` is the same
/// sequence no matter how much of the parent has been consumed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, tags: &[u64]) -> Rng {
        let mut h = splitmix64(self.seed);
        for &t in tags {
            h = splitmix64(h ^ splitmix64(t.wrapping_add(0xA076_1D64_78BD_642F)));
        }
        Rng::new(h)
    }

    /// Uniform on the open interval, clamped away from the endpoints.
    pub fn uniform_open(&mut self) -> f64 {
        // 53 random bits -> [0, 1)
        let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u.clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform_open();
        -(-u.ln()).ln()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng as _;
        self.inner.random_range(0..n)
    }
}

impl RngCore for Rng {
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

/// `n` i.i.d. standard normal draws.
pub fn sample_gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian()).collect()
}

/// `n` i.i.d. Gumbel(0, 1) draws via `-ln(-ln u)` with clamped `u`.
pub fn sample_gumbel(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gumbel()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gaussian_moments() {
        let xs = sample_gaussian(&mut Rng::new(7), 1_000_000);
        let (mean, var) = mean_var(&xs);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let xs = sample_gumbel(&mut Rng::new(11), 1_000_000);
        let (mean, _) = mean_var(&xs);
        assert!((mean - EULER_GAMMA).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn same_seed_same_draws() {
        assert_eq!(
            sample_gaussian(&mut Rng::new(3), 64),
            sample_gaussian(&mut Rng::new(3), 64)
        );
        assert_eq!(sample_gumbel(&mut Rng::new(3), 64), sample_gumbel(&mut Rng::new(3), 64));
        assert_ne!(
            sample_gaussian(&mut Rng::new(3), 8),
            sample_gaussian(&mut Rng::new(4), 8)
        );
    }

    #[test]
    fn single_draws_are_finite() {
        assert!(sample_gaussian(&mut Rng::new(0), 1)[0].is_finite());
        assert!(sample_gumbel(&mut Rng::new(0), 1)[0].is_finite());
    }

    #[test]
    fn gumbel_finite_at_clamped_extremes() {
        for u in [GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP] {
            let g = -(-u.ln()).ln();
            assert!(g.is_finite());
        }
    }

    #[test]
    fn substreams_ignore_parent_position() {
        let mut a = Rng::new(42);
        let b = Rng::new(42);
        let _ = sample_gaussian(&mut a, 10);
        let mut sa = a.substream(&[1, 2]);
        let mut sb = b.substream(&[1, 2]);
        assert_eq!(sample_gaussian(&mut sa, 5), sample_gaussian(&mut sb, 5));
        let mut sc = b.substream(&[2, 1]);
        assert_ne!(sample_gaussian(&mut sb, 5), sample_gaussian(&mut sc, 5));
    }
}
