//! Seedable counter-based pseudorandom generator.
//!
//! Every random choice in the pipeline flows through [`Rng`]. The state is a
//! (key, counter) pair and each output is a pure function of both, so the
//! stream is exactly reproducible from the seed and the call sequence, and
//! child generators derived per work item make parallel and serial execution
//! byte-identical.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based PRNG; identical seed + identical call sequence gives an
/// identical stream.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: mix(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Derives an independent child stream keyed by `id`; used to fan work
    /// out over samples so parallel generation stays deterministic.
    pub fn child(&self, id: u64) -> Rng {
        Rng {
            key: mix(self.key ^ mix(id.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key ^ self.counter.wrapping_mul(GOLDEN))
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // 53-bit uniform scaled; bias is negligible for the small n used here
        (self.uniform() * n as f64) as u64
    }
}
