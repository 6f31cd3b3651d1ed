//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, counter)`: the state is
//! `seed + (counter + 1) * 0x9E3779B97F4A7C15` passed through the SplitMix64
//! finalizer. Results are bit-exact across platforms, and any stream element
//! can be recomputed without replaying the ones before it.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for the given seed and zero-based counter.
pub fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent stream derived from this generator's seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(mix(self.seed, stream ^ 0xA076_1D64_78BD_642F))
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.seed, self.counter);
        self.counter += 1;
        out
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }
}
