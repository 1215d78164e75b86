//! Thin wrappers over `libm` plus the few special functions the models need.
//!
//! Routing every transcendental through `libm` keeps the crate `no_std` and
//! makes results bit-identical across platforms.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub(crate) fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub(crate) const SQRT_2: f64 = core::f64::consts::SQRT_2;
pub(crate) const TAU: f64 = core::f64::consts::TAU;

/// Upper tail of the standard normal distribution, P(Z > z).
#[inline]
pub(crate) fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Standard normal CDF, P(Z <= z).
#[cfg_attr(not(test), allow(dead_code))]
#[inline]
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Inverse of `erfc` on (0, 2), by bisection refined with Newton steps.
///
/// Accurate to ~1e-14 relative over the range used here (arguments down to
/// ~1e-30); erfc is strictly decreasing so bracketing is straightforward.
pub(crate) fn erfc_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0 && y < 2.0);
    let (mut lo, mut hi) = if y > 1.0 { (-15.0, 0.0) } else { (0.0, 15.0) };
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton polish: d/dx erfc(x) = -2/sqrt(pi) * exp(-x^2)
    for _ in 0..4 {
        let f = erfc(x) - y;
        let d = -2.0 / sqrt(core::f64::consts::PI) * exp(-x * x);
        let step = f / d;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}

/// Neumaier-compensated accumulator; summation order fixed by the caller so
/// totals are reproducible regardless of how the work is scheduled.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if abs(self.sum) >= abs(value) {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
