//! Log-normal fading channel model.
//!
//! Atmospheric turbulence is modelled through the probability distribution
//! of the transmittance coefficient (PDTC),
//!
//! ```text
//! p(η) = 1/(√(2π)·σ·η) · exp(−[ln(η/η₀) + σ²/2]² / (2σ²))
//! ```
//!
//! parameterised by the mean transmittance η₀ and the Rytov log-irradiance
//! variance σ². The −σ²/2 shift makes `E[η] = η₀` exactly. For plane waves
//! the Rytov variance follows σ² = 1.23·C_n²·k^(7/6)·L^(11/6).
//!
//! The continuous distribution is carried through the rest of the pipeline
//! as a binned [`TransmittanceDistribution`]: log-spaced bins over the
//! central ±6σ of ln η, each holding its probability mass and the
//! probability-weighted mean transmittance of the bin.

use alloc::vec::Vec;

use crate::math;
use crate::rng::SplitMix64;

/// Mean transmittance and Rytov variance of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// Mean transmittance η₀, in (0, 1].
    pub eta0: f64,
    /// Rytov log-irradiance variance σ²; zero denotes a static channel.
    pub sigma2: f64,
}

/// Inputs to the plane-wave Rytov variance formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RytovInputs {
    /// Refractive index structure parameter C_n², in m^(−2/3).
    pub cn2: f64,
    /// Optical wave number k = 2π/λ, in rad/m.
    pub wave_number: f64,
    /// Propagation distance L, in m.
    pub distance: f64,
}

/// One transmittance bin: `[eta_low, eta_high)` with its representative
/// transmittance (the in-bin probability-weighted mean) and mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmittanceBin {
    pub eta_low: f64,
    pub eta_high: f64,
    pub eta_repr: f64,
    pub probability: f64,
}

/// Binned PDTC for one channel. `survival` is the total probability mass
/// held by the bins; truncation reduces it without renormalising.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransmittanceDistribution {
    pub bins: Vec<TransmittanceBin>,
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelError {
    /// η₀ outside (0, 1] or σ² negative (or non-finite).
    InvalidSpec,
    /// Transmittance argument must be strictly positive.
    NonPositiveTransmittance,
    /// Density requested for σ² = 0; use the static-channel path instead.
    StaticChannel,
    /// Every Rytov input must be strictly positive.
    NonPositiveRytovInput,
    /// Fluctuating channels need at least two bins.
    TooFewBins,
    /// Sampling requires n ≥ 1.
    EmptySampleRequest,
    /// Truncation thresholds are transmittances and cannot be negative.
    NegativeThreshold,
}

impl core::fmt::Display for ChannelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidSpec => write!(f, "channel spec requires 0 < eta0 <= 1 and sigma2 >= 0"),
            Self::NonPositiveTransmittance => write!(f, "transmittance must be > 0"),
            Self::StaticChannel => {
                write!(f, "sigma2 = 0 has no density; use the static-channel path")
            }
            Self::NonPositiveRytovInput => write!(f, "rytov inputs must all be > 0"),
            Self::TooFewBins => write!(f, "discretisation needs n_bins >= 2"),
            Self::EmptySampleRequest => write!(f, "sample count must be >= 1"),
            Self::NegativeThreshold => write!(f, "truncation threshold must be >= 0"),
        }
    }
}

impl ChannelSpec {
    pub fn new(eta0: f64, sigma2: f64) -> Result<Self, ChannelError> {
        let spec = Self { eta0, sigma2 };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from a mean loss in dB: η₀ = 10^(−dB/10).
    pub fn from_loss_db(loss_db: f64, sigma2: f64) -> Result<Self, ChannelError> {
        Self::new(math::powf(10.0, -loss_db / 10.0), sigma2)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let ok = self.eta0.is_finite()
            && self.eta0 > 0.0
            && self.eta0 <= 1.0
            && self.sigma2.is_finite()
            && self.sigma2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ChannelError::InvalidSpec)
        }
    }

    /// σ² = 0: the channel sits at exactly η₀.
    pub fn is_static(&self) -> bool {
        self.sigma2 == 0.0
    }

    /// Mean of ln η, i.e. ln η₀ − σ²/2.
    pub fn log_mean(&self) -> f64 {
        math::ln(self.eta0) - self.sigma2 / 2.0
    }

    /// Probability mass the log-normal places above η = 1. The model does
    /// not truncate there; callers should warn when this exceeds ~1e-4.
    pub fn mass_above_unity(&self) -> f64 {
        if self.is_static() {
            return 0.0;
        }
        let sigma = math::sqrt(self.sigma2);
        math::normal_upper_tail(-self.log_mean() / sigma)
    }
}

impl TransmittanceDistribution {
    /// Single-bin distribution of a static channel.
    pub fn static_at(eta0: f64) -> Self {
        Self {
            bins: alloc::vec![TransmittanceBin {
                eta_low: eta0,
                eta_high: eta0,
                eta_repr: eta0,
                probability: 1.0,
            }],
            survival: 1.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Probability-weighted mean transmittance over the held mass.
    pub fn mean(&self) -> f64 {
        if self.survival <= 0.0 {
            return 0.0;
        }
        let mut acc = math::CompensatedSum::default();
        for bin in &self.bins {
            acc.add(bin.probability * bin.eta_repr);
        }
        acc.total() / self.survival
    }

    /// Checks bin ordering, mass consistency, and the repr placement
    /// invariants; intended for tests and loaders.
    pub fn check_invariants(&self) -> bool {
        let mut mass = math::CompensatedSum::default();
        let mut prev_high = 0.0;
        for bin in &self.bins {
            let ordered = bin.eta_low >= prev_high
                && (bin.eta_low < bin.eta_repr || bin.eta_low == bin.eta_high)
                && bin.eta_repr <= bin.eta_high
                && bin.probability >= 0.0;
            if !ordered {
                return false;
            }
            prev_high = bin.eta_high;
            mass.add(bin.probability);
        }
        math::abs(mass.total() - self.survival) <= 1e-9
    }
}

/// Evaluates the log-normal PDTC at `eta`.
pub fn pdtc_density(eta: f64, spec: &ChannelSpec) -> Result<f64, ChannelError> {
    spec.validate()?;
    if !(eta > 0.0) {
        return Err(ChannelError::NonPositiveTransmittance);
    }
    if spec.is_static() {
        return Err(ChannelError::StaticChannel);
    }
    let sigma = math::sqrt(spec.sigma2);
    let arg = math::ln(eta / spec.eta0) + spec.sigma2 / 2.0;
    Ok(math::exp(-arg * arg / (2.0 * spec.sigma2)) / (math::sqrt(math::TAU) * sigma * eta))
}

/// Plane-wave Rytov variance σ² = 1.23·C_n²·k^(7/6)·L^(11/6).
pub fn rytov_variance(inputs: &RytovInputs) -> Result<f64, ChannelError> {
    let ok = inputs.cn2.is_finite()
        && inputs.cn2 > 0.0
        && inputs.wave_number.is_finite()
        && inputs.wave_number > 0.0
        && inputs.distance.is_finite()
        && inputs.distance > 0.0;
    if !ok {
        return Err(ChannelError::NonPositiveRytovInput);
    }
    Ok(1.23
        * inputs.cn2
        * math::powf(inputs.wave_number, 7.0 / 6.0)
        * math::powf(inputs.distance, 11.0 / 6.0))
}

/// Draws `n` i.i.d. transmittance samples, η = exp(X) with
/// X ~ N(ln η₀ − σ²/2, σ²). Deterministic for a fixed seed.
pub fn sample_transmittance(
    spec: &ChannelSpec,
    seed: u64,
    n: usize,
) -> Result<Vec<f64>, ChannelError> {
    spec.validate()?;
    if n == 0 {
        return Err(ChannelError::EmptySampleRequest);
    }
    let mut out = Vec::with_capacity(n);
    if spec.is_static() {
        out.resize(n, spec.eta0);
        return Ok(out);
    }
    let mu = spec.log_mean();
    let sigma = math::sqrt(spec.sigma2);
    let mut rng = SplitMix64::new(seed);
    for _ in 0..n {
        out.push(math::exp(mu + sigma * rng.next_gaussian()));
    }
    Ok(out)
}

/// Discretises the PDTC into `n_bins` log-spaced bins covering
/// ln η ∈ [μ_X − 6σ, μ_X + 6σ]; captures all but ~2e-9 of the mass.
///
/// Bin masses come from normal-CDF differences and each `eta_repr` is the
/// in-bin probability-weighted mean, computed from the log-normal partial
/// expectation identity `E[η; η<u] = η₀·Φ((ln u − μ_X)/σ − σ)`.
pub fn discretize(
    spec: &ChannelSpec,
    n_bins: usize,
) -> Result<TransmittanceDistribution, ChannelError> {
    spec.validate()?;
    if spec.is_static() {
        return Ok(TransmittanceDistribution::static_at(spec.eta0));
    }
    if n_bins < 2 {
        return Err(ChannelError::TooFewBins);
    }
    let sigma = math::sqrt(spec.sigma2);
    let mu = spec.log_mean();
    let half_width = 6.0 * sigma;
    let mut bins = Vec::with_capacity(n_bins);
    let mut mass = math::CompensatedSum::default();
    for i in 0..n_bins {
        // log-spaced edges over [mu - 6 sigma, mu + 6 sigma]
        let z_lo = -6.0 + 12.0 * i as f64 / n_bins as f64;
        let z_hi = -6.0 + 12.0 * (i + 1) as f64 / n_bins as f64;
        let eta_low = math::exp(mu + half_width * z_lo / 6.0);
        let eta_high = math::exp(mu + half_width * z_hi / 6.0);
        let p = math::normal_upper_tail(z_lo) - math::normal_upper_tail(z_hi);
        let partial = spec.eta0
            * (math::normal_upper_tail(z_lo - sigma) - math::normal_upper_tail(z_hi - sigma));
        let mut eta_repr = if p > 0.0 { partial / p } else { f64::NAN };
        if !(eta_repr > eta_low && eta_repr <= eta_high) {
            // deep-tail bins where the CDF differences underflow
            eta_repr = math::sqrt(eta_low * eta_high);
        }
        mass.add(p);
        bins.push(TransmittanceBin {
            eta_low,
            eta_high,
            eta_repr,
            probability: p,
        });
    }
    Ok(TransmittanceDistribution {
        bins,
        survival: mass.total(),
    })
}

/// Retains the bins with `eta_repr >= eta_th`; returns the truncated
/// distribution (not renormalised) and the retained fraction of the input
/// mass. A threshold above every bin yields an empty distribution with
/// survival 0, signalling that all data would be rejected.
pub fn truncate_above(
    dist: &TransmittanceDistribution,
    eta_th: f64,
) -> Result<(TransmittanceDistribution, f64), ChannelError> {
    if !(eta_th >= 0.0) {
        return Err(ChannelError::NegativeThreshold);
    }
    let mut bins = Vec::new();
    let mut mass = math::CompensatedSum::default();
    for bin in &dist.bins {
        if bin.eta_repr >= eta_th {
            bins.push(*bin);
            mass.add(bin.probability);
        }
    }
    let retained = mass.total();
    let fraction = if dist.survival > 0.0 {
        retained / dist.survival
    } else {
        0.0
    };
    Ok((
        TransmittanceDistribution {
            bins,
            survival: retained,
        },
        fraction,
    ))
}
