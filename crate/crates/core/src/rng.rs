//! Deterministic pseudo-random generator shared by model init and test-case
//! generation.
//!
//! A fixed 64-bit linear congruential generator (Knuth's MMIX multiplier) so
//! that the same seed produces bit-identical streams on every platform. Only
//! integer arithmetic and exact float conversion are involved; no
//! platform-dependent state.

/// 64-bit linear congruential generator, `state = state * A + C`.
///
/// A = 6364136223846793005, C = 1442695040888963407. The top 53 bits of each
/// state feed the float output, so `next_f64` is uniform in `[0, 1)`.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    const MULTIPLIER: u64 = 6364136223846793005;
    const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        // Scramble the seed once so small seeds do not start near zero.
        let mut rng = Lcg { state: seed };
        rng.step();
        rng
    }

    fn step(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.step()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.step() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Uniform integer in `lo..=hi`.
    pub fn next_range(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.next_below(hi - lo + 1)
    }
}
