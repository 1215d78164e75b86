//! Seeded pseudo-random number generation.
//!
//! A SplitMix64 generator is all the simulator needs: it is tiny, fast,
//! trivially seedable, and has no global state, which keeps every sampling
//! path deterministic for a fixed seed. Gaussian variates come from the
//! Box-Muller transform.

use crate::math;

/// SplitMix64 PRNG.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare_gaussian: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare_gaussian: None,
        }
    }

    /// Derives an independent child generator; used to give each candidate
    /// or frame its own stream so parallel evaluation cannot change results.
    pub fn fork(&self, stream: u64) -> Self {
        let mut mixer = Self::new(self.state ^ stream.wrapping_mul(0xA076_1D64_78BD_642F));
        mixer.next_u64();
        Self {
            state: mixer.next_u64(),
            spare_gaussian: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    pub fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Log-uniform in [lo, hi); both bounds must be positive.
    pub fn next_log_range(&mut self, lo: f64, hi: f64) -> f64 {
        math::exp(self.next_range(math::ln(lo), math::ln(hi)))
    }

    pub fn next_usize(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal variate (Box-Muller; the second variate of each pair
    /// is cached).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let r = math::sqrt(-2.0 * math::ln(self.next_open_f64()));
        let theta = math::TAU * self.next_f64();
        self.spare_gaussian = Some(r * math::cos(theta + core::f64::consts::FRAC_PI_2));
        r * math::cos(theta)
    }

    /// Poisson variate with mean `lambda`.
    ///
    /// Knuth's product method below λ = 30; above that a rounded normal
    /// approximation, which is ample for the finite-statistics sampling mode
    /// where λ is either large or tiny.
    pub fn next_poisson(&mut self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        if lambda < 30.0 {
            let limit = math::exp(-lambda);
            let mut product = self.next_f64();
            let mut count = 0.0;
            while product > limit {
                product *= self.next_f64();
                count += 1.0;
            }
            count
        } else {
            let z = self.next_gaussian();
            let value = lambda + math::sqrt(lambda) * z;
            if value < 0.0 {
                0.0
            } else {
                libm::round(value)
            }
        }
    }
}
