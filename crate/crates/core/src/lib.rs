//! Core models for asymmetric measurement-device-independent QKD over
//! fading free-space channels.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`channel`] — log-normal transmittance statistics: density, sampling,
//!    discretisation into bins, and threshold truncation.
//! 2. [`detection`] — closed-form expected detection/error counts for the
//!    Z basis (signal states) and the 3×3 X-basis intensity-pair table.
//! 3. [`finite_key`] — gains with standard-error confidence bounds,
//!    single-photon yield/error estimation, and the secure key rate.
//! 4. [`optimizer`] — genetic-algorithm search over the 12 protocol
//!    parameters (signal/decoy intensities and preparation probabilities
//!    for both parties).
//! 5. [`postselection`] — ARTS threshold scans and P-RTS prefixed
//!    thresholds over the two channels' transmittance distributions.
//! 6. [`probe`] — classical probe-pulse transmittance estimation
//!    (Gaussian fits, frame sums, polynomial calibration).
//!
//! Everything here is `no_std` + `alloc`: all operations are pure given an
//! explicit seed, so results are reproducible across platforms and thread
//! counts. IO, file formats, and the command-line front end live in the
//! companion `mdiqkd-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod channel;
pub mod detection;
pub mod finite_key;
mod math;
pub mod optimizer;
pub mod postselection;
pub mod probe;
pub mod rng;

pub use channel::{
    discretize, pdtc_density, rytov_variance, sample_transmittance, truncate_above, ChannelError,
    ChannelSpec, RytovInputs, TransmittanceBin, TransmittanceDistribution,
};
pub use detection::{
    counts_table, counts_table_from_cases, pooled_counts, single_photon_reference,
    x_basis_case_decomposition, x_basis_counts, z_basis_counts, CountsRecord, DecoyLevel,
    DetectionError, DeviceParams, ProtocolParams, XBasisCases,
};
pub use finite_key::{
    binary_entropy, e11_upper, epsilon_to_gamma, gains_and_errors, gamma_to_epsilon, key_rate,
    key_rate_with, resolve_bound_settings, validate_bound_settings, y11_lower, BoundSettings,
    BoundValidation, BoundedGains, FiniteKeyError, KeyRateResult, PairBounds, PrefactorConvention,
    RateShortfall, YieldBoundForm,
};
pub use optimizer::{
    constrain, fitness, optimize, optimize_with, raw_fitness, FitnessEvaluator, FitnessMode,
    GaConfig, GenerationStats, Genome, OptimizationProblem, OptimizeOutcome, OptimizerError,
    SearchBounds, SignalConstraint, INFEASIBLE,
};
pub use postselection::{
    arts_scan, arts_scan_binned, loss_sweep, prts_threshold, rate_at_thresholds, BinnedCountsEntry,
    GridSpec, PostselectionError, PrtsResult, RateSurface, SurfacePoint, SweepCurve, SweepPoint,
    SweepPointSpec, ThresholdPair,
};
pub use probe::{
    estimate_transmittance, fit_calibration, frame_sum, gaussian_fit, synthetic_frame, AreaMethod,
    CalibrationCurve, GaussianFit, ProbeError, ProbeFrame, SyntheticFrameSpec,
    TransmittanceEstimate,
};
pub use rng::SplitMix64;
