//! Deterministic random streams.
//!
//! Every randomized subsystem (data generation, parameter init, augmentation)
//! draws from its own stream derived from a global seed and a path string, so
//! changing how one subsystem consumes randomness never perturbs another.
//! The generator is splitmix64, which is stable across platforms and builds.

/// Small deterministic RNG (splitmix64 core).
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        // One warm-up step avoids the all-zeros degenerate start.
        let mut state = seed;
        splitmix64(&mut state);
        Rng { state }
    }

    /// Stream derived from (seed, path). Distinct paths give independent
    /// streams; the same (seed, path) always yields the same stream.
    pub fn from_path(seed: u64, path: &str) -> Self {
        let mut state = seed ^ fnv1a(path.as_bytes()).rotate_left(17);
        splitmix64(&mut state);
        Rng { state }
    }

    /// Counter-indexed substream, e.g. one per dataset sample.
    pub fn from_path_indexed(seed: u64, path: &str, index: u64) -> Self {
        let mut state = seed
            ^ fnv1a(path.as_bytes()).rotate_left(17)
            ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31);
        splitmix64(&mut state);
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Draws two uniforms per sample.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_scaled(&mut self, sigma: f64) -> f64 {
        self.normal() * sigma
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the n used here (n << 2^64).
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::from_path(7, "data");
        let mut b = Rng::from_path(7, "data");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_paths_diverge() {
        let mut a = Rng::from_path(7, "data");
        let mut b = Rng::from_path(7, "init");
        let same = (0..32).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = Rng::new(3);
        for _ in 0..1000 {
            let x = r.uniform(0.66, 1.5);
            assert!((0.66..1.5).contains(&x));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Rng::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
