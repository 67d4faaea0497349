//! Counter-based pseudo-random numbers.
//!
//! Everything random in the crate (weight init, clip synthesis, epoch
//! shuffles) is drawn from this generator so that runs are reproducible
//! bit-for-bit in any language. The recurrence is frozen:
//!
//! * state update: `state += 0x9E3779B97F4A7C15` (wrapping)
//! * output: splitmix64 finalizer
//!   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`
//! * uniform f64 in [0,1): `(next_u64() >> 11) as f64 * 2^-53`
//! * standard normal: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one
//!   output per pair of uniforms (the sine half is discarded)
//! * stream derivation: `mix(a, b) = splitmix64_finalize(a ^ splitmix64_finalize(b + 0x9E3779B97F4A7C15))`

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a parent seed and a key.
pub fn mix(seed: u64, key: u64) -> u64 {
    finalize(seed ^ finalize(key.wrapping_add(GOLDEN)))
}

/// FNV-1a over a string, used to key parameter streams by name.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        finalize(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Uses plain modulo; the bias is irrelevant
    /// at the ranges used here and keeps the recurrence trivial to port.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
