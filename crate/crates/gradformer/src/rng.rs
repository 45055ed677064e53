//! Deterministic pseudo-random numbers.
//!
//! Everything random in this crate — weight initialization, dataset synthesis,
//! epoch shuffling, augmentation coin flips — flows through one xorshift64*
//! generator so that a seed pins every downstream byte. The algorithm is fixed
//! (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D) and must not change:
//! generated datasets are bit-reproducible across builds and platforms.

/// xorshift64* generator. State must be non-zero; a zero seed is remapped to a
/// fixed odd constant so every seed is usable.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        Rng { state }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let v = (self.next_f64() * n as f64) as usize;
        v.min(n - 1)
    }

    /// Fair coin.
    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Standard normal via Box–Muller (one draw per call; the sine half is
    /// discarded to keep the stream layout trivial to reason about).
    pub fn normal(&mut self) -> f64 {
        // 1 - u ∈ (0, 1] keeps the log argument strictly positive.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Zero-mean normal with the given standard deviation.
    pub fn normal_scaled(&mut self, std: f64) -> f64 {
        self.normal() * std
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
