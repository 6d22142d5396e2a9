//! Seeded PRNG behind every stochastic component.
//!
//! SplitMix64 state transition with a Marsaglia-polar Gaussian built on the
//! portable [`crate::fmath`] primitives, so weight synthesis, random masks
//! and skip-set sampling reproduce bit-for-bit everywhere.

use crate::digest::fnv1a64;
use crate::fmath;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            spare_gaussian: None,
        }
    }

    /// Independent stream derived from a seed and a label, so consumers keyed
    /// by name (per-matrix masks, per-modality means) do not depend on
    /// iteration order.
    pub fn seeded_with(seed: u64, label: &str) -> Self {
        Rng::new(seed ^ fnv1a64(label.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        // SplitMix64 (Steele, Lea, Flood 2014).
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Unbiased uniform integer in [0, n).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % n;
            }
        }
    }

    /// Standard normal via the polar method; no trig, portable ln.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare_gaussian.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * fmath::ln(s) / s).sqrt();
                self.spare_gaussian = Some(v * m);
                return u * m;
            }
        }
    }

    pub fn gaussian_f32(&mut self, std_dev: f64) -> f32 {
        (self.gaussian() * std_dev) as f32
    }

    /// k distinct indices from [0, n), ascending. Partial Fisher-Yates.
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
