//! Closed-form expected detection and error counts at the measurement relay.
//!
//! The Z basis carries the signal states; its detection count splits into
//! opposite-polarisation coincidences (`n_z1`) and same-polarisation
//! accidentals seeded by misalignment and dark counts (`n_z2`, which is also
//! the error count). The X basis carries the decoy states; for every
//! intensity pair (i, j) the combined closed forms give the total and error
//! counts, and [`x_basis_case_decomposition`] exposes the underlying
//! per-photon-number case probabilities ({1,0}/{0,1}, {1,1}, {2,0}/{0,2})
//! for diagnostics and for single-photon reference values.
//!
//! Counts are expectation values (real numbers); a seeded Poisson sampling
//! mode exists for finite-statistics studies via
//! [`CountsRecord::poisson_sampled`]. The model carries no O(Y₀²) dark-dark
//! coincidence term, and temporal detector effects (dead time, jitter) are
//! out of scope.

use crate::channel::TransmittanceDistribution;
use crate::math;
use crate::rng::SplitMix64;

/// One party's intensity set {s, μ, ν, ω} and preparation probabilities.
///
/// p_ω is always derived as 1 − p_s − p_μ − p_ν, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Signal intensity s (Z basis), mean photon number.
    pub signal: f64,
    /// Strong decoy intensity μ.
    pub mu: f64,
    /// Weak decoy intensity ν.
    pub nu: f64,
    /// Weakest decoy intensity ω (0 for vacuum).
    pub omega: f64,
    /// Signal preparation probability p_s.
    pub p_signal: f64,
    /// Strong decoy preparation probability p_μ.
    pub p_mu: f64,
    /// Weak decoy preparation probability p_ν.
    pub p_nu: f64,
}

/// Detector and run calibration constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    /// Dark count probability Y₀ per detector per gate.
    pub dark_count: f64,
    /// Detector efficiency η_d.
    pub detector_eff: f64,
    /// Z-basis polarisation misalignment probability e_dz.
    pub misalign_z: f64,
    /// X-basis misalignment probability e_dx.
    pub misalign_x: f64,
    /// Total transmitted pulse pairs N.
    pub n_pulses: f64,
    /// Error-correction efficiency factor f (≥ 1).
    pub ec_efficiency: f64,
    /// Confidence parameter γ for the standard-error bounds.
    pub gamma: f64,
}

/// Decoy intensity level used in the X basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoyLevel {
    Mu,
    Nu,
    Omega,
}

impl DecoyLevel {
    pub const ALL: [DecoyLevel; 3] = [DecoyLevel::Mu, DecoyLevel::Nu, DecoyLevel::Omega];

    pub fn index(self) -> usize {
        match self {
            DecoyLevel::Mu => 0,
            DecoyLevel::Nu => 1,
            DecoyLevel::Omega => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DecoyLevel::Mu => "mu",
            DecoyLevel::Nu => "nu",
            DecoyLevel::Omega => "omega",
        }
    }
}

/// Z-basis counts plus the 3×3 X-basis detection/error count table.
/// All counts scale linearly in `n_effective`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountsRecord {
    pub n_zz: f64,
    pub m_zz: f64,
    /// Indexed `[alice decoy][bob decoy]` in μ, ν, ω order.
    pub n_x: [[f64; 3]; 3],
    /// Same layout as `n_x`.
    pub m_x: [[f64; 3]; 3],
    /// Effective pulse-pair count behind these counts.
    pub n_effective: f64,
}

/// The six per-case Bell-event probabilities for one X-basis intensity pair
/// (per prepared pulse pair, before the N·p_i·p_j factors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XBasisCases {
    /// {1,0}/{0,1}: one photon arrives, the coincidence is dark-count
    /// seeded. Ψ⁻ and Ψ⁺ rates are equal for this case.
    pub psi_minus_single: f64,
    pub psi_plus_single: f64,
    /// {1,1}: one photon from each party interferes.
    pub psi_minus_pair: f64,
    pub psi_plus_pair: f64,
    /// {2,0}/{0,2}: both photons from the same party.
    pub psi_minus_double: f64,
    pub psi_plus_double: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionError {
    /// Intensity ordering or probability simplex violated.
    InvalidProtocolParams,
    /// Device constants outside their physical ranges.
    InvalidDeviceParams,
    /// Transmittances must lie in [0, 1].
    TransmittanceOutOfRange,
    /// A closed form produced a negative count; indicates formula misuse.
    NegativeCount,
}

impl core::fmt::Display for DetectionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidProtocolParams => write!(
                f,
                "protocol params require mu > nu > omega >= 0, s > 0, and probabilities summing to <= 1"
            ),
            Self::InvalidDeviceParams => write!(f, "device params outside physical ranges"),
            Self::TransmittanceOutOfRange => write!(f, "transmittance must lie in [0, 1]"),
            Self::NegativeCount => write!(f, "internal error: closed form produced a negative count"),
        }
    }
}

impl ProtocolParams {
    /// Derived probability of the weakest decoy, 1 − p_s − p_μ − p_ν.
    pub fn p_omega(&self) -> f64 {
        1.0 - self.p_signal - self.p_mu - self.p_nu
    }

    pub fn intensity(&self, level: DecoyLevel) -> f64 {
        match level {
            DecoyLevel::Mu => self.mu,
            DecoyLevel::Nu => self.nu,
            DecoyLevel::Omega => self.omega,
        }
    }

    pub fn probability(&self, level: DecoyLevel) -> f64 {
        match level {
            DecoyLevel::Mu => self.p_mu,
            DecoyLevel::Nu => self.p_nu,
            DecoyLevel::Omega => self.p_omega(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let finite = self.signal.is_finite()
            && self.mu.is_finite()
            && self.nu.is_finite()
            && self.omega.is_finite();
        let intensities = finite
            && self.signal > 0.0
            && self.mu > self.nu
            && self.nu > self.omega
            && self.omega >= 0.0;
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        let probs = in_unit(self.p_signal)
            && in_unit(self.p_mu)
            && in_unit(self.p_nu)
            && self.p_omega() >= 0.0;
        if intensities && probs {
            Ok(())
        } else {
            Err(DetectionError::InvalidProtocolParams)
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let ok = self.dark_count >= 0.0
            && self.dark_count < 1.0
            && self.detector_eff > 0.0
            && self.detector_eff <= 1.0
            && self.misalign_z >= 0.0
            && self.misalign_z < 0.5
            && self.misalign_x >= 0.0
            && self.misalign_x < 0.5
            && self.n_pulses >= 1.0
            && self.ec_efficiency >= 1.0
            && self.gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DetectionError::InvalidDeviceParams)
        }
    }
}

impl CountsRecord {
    pub fn zero() -> Self {
        Self {
            n_zz: 0.0,
            m_zz: 0.0,
            n_x: [[0.0; 3]; 3],
            m_x: [[0.0; 3]; 3],
            n_effective: 0.0,
        }
    }

    pub fn x_pair(&self, i: DecoyLevel, j: DecoyLevel) -> (f64, f64) {
        (
            self.n_x[i.index()][j.index()],
            self.m_x[i.index()][j.index()],
        )
    }

    /// Every error count within [0, n]; counts non-negative.
    pub fn check_invariants(&self) -> bool {
        let mut ok = self.m_zz >= 0.0 && self.m_zz <= self.n_zz && self.n_effective >= 0.0;
        for i in 0..3 {
            for j in 0..3 {
                ok &= self.m_x[i][j] >= 0.0 && self.m_x[i][j] <= self.n_x[i][j];
            }
        }
        ok
    }

    /// Replaces each expected count with a Poisson draw of that mean
    /// (errors drawn first, then the remainder, so m ≤ n is preserved).
    /// Off by default everywhere; intended for finite-statistics studies.
    pub fn poisson_sampled(&self, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut sample_pair = |n: f64, m: f64| {
            let errors = rng.next_poisson(m);
            let correct = rng.next_poisson((n - m).max(0.0));
            (errors + correct, errors)
        };
        let (n_zz, m_zz) = sample_pair(self.n_zz, self.m_zz);
        let mut out = Self {
            n_zz,
            m_zz,
            n_x: [[0.0; 3]; 3],
            m_x: [[0.0; 3]; 3],
            n_effective: self.n_effective,
        };
        for i in 0..3 {
            for j in 0..3 {
                let (n, m) = sample_pair(self.n_x[i][j], self.m_x[i][j]);
                out.n_x[i][j] = n;
                out.m_x[i][j] = m;
            }
        }
        out
    }
}

fn check_transmittance(eta: f64) -> Result<(), DetectionError> {
    if eta.is_finite() && (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(DetectionError::TransmittanceOutOfRange)
    }
}

/// Z-basis expected total and error counts (n_zz, m_zz) for signal pulses at
/// instantaneous transmittances (η_A, η_B).
///
/// n_z1 covers opposite-polarisation coincidences and n_z2 the
/// same-polarisation accidentals; n_zz = n_z1 + n_z2 and m_zz = n_z2.
pub fn z_basis_counts(
    eta_a: f64,
    eta_b: f64,
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dev: &DeviceParams,
    n_eff: f64,
) -> Result<(f64, f64), DetectionError> {
    check_transmittance(eta_a)?;
    check_transmittance(eta_b)?;
    alice.validate()?;
    bob.validate()?;
    dev.validate()?;

    let chi_a = eta_a * dev.detector_eff * alice.signal;
    let chi_b = eta_b * dev.detector_eff * bob.signal;
    let e_dz = dev.misalign_z;
    let prep = 0.5 * n_eff * alice.p_signal * bob.p_signal;

    let n_z1 = prep * (1.0 - math::exp(-chi_a)) * (1.0 - math::exp(-chi_b)) * (1.0 - 2.0 * e_dz);
    let n_z2 = prep
        * (1.0 - math::exp(-(1.0 - e_dz) * chi_a) * math::exp(-(1.0 - e_dz) * chi_b))
        * (e_dz * chi_a + dev.dark_count + e_dz * chi_b + dev.dark_count);

    if n_z1 < 0.0 || n_z2 < 0.0 {
        return Err(DetectionError::NegativeCount);
    }
    Ok((n_z1 + n_z2, n_z2))
}

/// X-basis combined closed forms for one intensity pair: expected total and
/// error counts (n, m) with Alice sending intensity `i_a` (probability
/// `p_i`) and Bob `j_b` (probability `p_j`).
///
/// With a = η_d·η_A·i and b = η_d·η_B·j:
///
/// ```text
/// n = N·p_i·p_j·[2Y₀(a+b) + ¼(a+b)²]·e^(−a−b)
/// m = N·p_i·p_j·[ Y₀(a+b) + ⅛(a² + b² + 8·e_dx·a·b)]·e^(−a−b)
/// ```
///
/// m ≤ n holds for every e_dx < ½ since n − m = Y₀(a+b) + ⅛(a²+b²) +
/// (½−e_dx)·a·b.
pub fn x_basis_counts(
    i_a: f64,
    j_b: f64,
    p_i: f64,
    p_j: f64,
    eta_a: f64,
    eta_b: f64,
    dev: &DeviceParams,
    n_eff: f64,
) -> (f64, f64) {
    let a = dev.detector_eff * eta_a * i_a;
    let b = dev.detector_eff * eta_b * j_b;
    let damp = math::exp(-a - b);
    let scale = n_eff * p_i * p_j;
    let n = scale * (2.0 * dev.dark_count * (a + b) + 0.25 * (a + b) * (a + b)) * damp;
    let m = scale
        * (dev.dark_count * (a + b) + 0.125 * (a * a + b * b + 8.0 * dev.misalign_x * a * b))
        * damp;
    (n, m)
}

/// Per-case Ψ⁻/Ψ⁺ probabilities for one X-basis intensity pair, as the
/// three photon-number cases before they are combined.
///
/// Exponents follow the dimensionally consistent reading: every damping
/// factor is e^(−η_A·η_d·i − η_B·η_d·j), and the {1,1} Ψ⁺ intensity product
/// uses the pair's own intensities (i, j).
pub fn x_basis_case_decomposition(
    i_a: f64,
    j_b: f64,
    eta_a: f64,
    eta_b: f64,
    dev: &DeviceParams,
) -> XBasisCases {
    let a = dev.detector_eff * eta_a * i_a;
    let b = dev.detector_eff * eta_b * j_b;
    let damp = math::exp(-a - b);
    let y0 = dev.dark_count;
    let e_dx = dev.misalign_x;

    let single = y0 * (a + b) * damp;
    XBasisCases {
        psi_minus_single: single,
        psi_plus_single: single,
        psi_minus_pair: 0.5 * (1.0 - 2.0 * e_dx) * a * b * damp,
        psi_plus_pair: 0.25 * (1.0 - 2.0 * e_dx) * a * b * damp,
        psi_minus_double: 0.25 * (a * a + b * b) * damp,
        psi_plus_double: 0.25 * e_dx * (a * a + b * b) * damp,
    }
}

impl XBasisCases {
    pub fn psi_minus_total(&self) -> f64 {
        self.psi_minus_single + self.psi_minus_pair + self.psi_minus_double
    }

    pub fn psi_plus_total(&self) -> f64 {
        self.psi_plus_single + self.psi_plus_pair + self.psi_plus_double
    }

    /// (n_c1, n_w1): expected Ψ⁻ and Ψ⁺ event counts for one preparation
    /// pairing, ½·N·p_i·p_j·ΣΨ.
    pub fn bell_event_counts(&self, p_i: f64, p_j: f64, n_eff: f64) -> (f64, f64) {
        let prep = 0.5 * n_eff * p_i * p_j;
        (prep * self.psi_minus_total(), prep * self.psi_plus_total())
    }

    /// (n, m) assembled from the cases: n = 2(n_c1 + n_w1), m = 2·n_w1.
    pub fn assembled_counts(&self, p_i: f64, p_j: f64, n_eff: f64) -> (f64, f64) {
        let (n_c1, n_w1) = self.bell_event_counts(p_i, p_j, n_eff);
        (2.0 * (n_c1 + n_w1), 2.0 * n_w1)
    }
}

/// Detection probability and error rate for an emitted single-photon pair,
/// evaluated directly from the per-case formulas: each photon reaches the
/// relay with probability η·η_d, and the arrival pattern then detects with
/// the corresponding case probability.
///
/// Returns (Y₁₁, e₁₁); these are the reference values the statistical
/// bounds must bracket.
pub fn single_photon_reference(eta_a: f64, eta_b: f64, dev: &DeviceParams) -> (f64, f64) {
    let c_a = eta_a * dev.detector_eff;
    let c_b = eta_b * dev.detector_eff;
    let e_dx = dev.misalign_x;
    let one_arrives = c_a * (1.0 - c_b) + (1.0 - c_a) * c_b;
    let yield_11 = 0.75 * (1.0 - 2.0 * e_dx) * c_a * c_b + 2.0 * dev.dark_count * one_arrives;
    let errors_11 = 0.25 * (1.0 - 2.0 * e_dx) * c_a * c_b + dev.dark_count * one_arrives;
    let e11 = if yield_11 > 0.0 {
        errors_11 / yield_11
    } else {
        0.5
    };
    (yield_11, e11)
}

fn fill_table(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    eta_a: f64,
    eta_b: f64,
    dev: &DeviceParams,
    n_eff: f64,
    from_cases: bool,
) -> Result<CountsRecord, DetectionError> {
    let (n_zz, m_zz) = z_basis_counts(eta_a, eta_b, alice, bob, dev, n_eff)?;
    let mut rec = CountsRecord {
        n_zz,
        m_zz,
        n_x: [[0.0; 3]; 3],
        m_x: [[0.0; 3]; 3],
        n_effective: n_eff,
    };
    for i in DecoyLevel::ALL {
        for j in DecoyLevel::ALL {
            let (n, m) = if from_cases {
                x_basis_case_decomposition(alice.intensity(i), bob.intensity(j), eta_a, eta_b, dev)
                    .assembled_counts(alice.probability(i), bob.probability(j), n_eff)
            } else {
                x_basis_counts(
                    alice.intensity(i),
                    bob.intensity(j),
                    alice.probability(i),
                    bob.probability(j),
                    eta_a,
                    eta_b,
                    dev,
                    n_eff,
                )
            };
            if n < 0.0 || m < 0.0 {
                return Err(DetectionError::NegativeCount);
            }
            rec.n_x[i.index()][j.index()] = n;
            rec.m_x[i.index()][j.index()] = m;
        }
    }
    Ok(rec)
}

/// Full counts record at fixed transmittances: Z basis plus all nine
/// X-basis intensity pairs via the combined closed forms.
pub fn counts_table(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    eta_a: f64,
    eta_b: f64,
    dev: &DeviceParams,
    n_eff: f64,
) -> Result<CountsRecord, DetectionError> {
    fill_table(alice, bob, eta_a, eta_b, dev, n_eff, false)
}

/// Same record assembled from the per-case decomposition instead of the
/// combined forms. The two presentations differ by small absorbed terms;
/// this variant is the reference model for bound-validity checks.
pub fn counts_table_from_cases(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    eta_a: f64,
    eta_b: f64,
    dev: &DeviceParams,
    n_eff: f64,
) -> Result<CountsRecord, DetectionError> {
    fill_table(alice, bob, eta_a, eta_b, dev, n_eff, true)
}

/// Turbulence-averaged counts: the counts table evaluated at every bin pair
/// of the two transmittance distributions, weighted by the joint bin mass.
///
/// `n_effective` becomes N·survival_a·survival_b. Summation is compensated
/// and runs in a fixed row-major order so results do not depend on how the
/// work is scheduled. Empty distributions yield the zero record.
pub fn pooled_counts(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dist_a: &TransmittanceDistribution,
    dist_b: &TransmittanceDistribution,
    dev: &DeviceParams,
) -> Result<CountsRecord, DetectionError> {
    if dist_a.is_empty() || dist_b.is_empty() {
        return Ok(CountsRecord::zero());
    }
    let mut acc = CountsAccumulator::new();
    for bin_a in &dist_a.bins {
        for bin_b in &dist_b.bins {
            let weight = bin_a.probability * bin_b.probability;
            if weight == 0.0 {
                continue;
            }
            let rec = counts_table(
                alice,
                bob,
                bin_a.eta_repr.min(1.0),
                bin_b.eta_repr.min(1.0),
                dev,
                dev.n_pulses,
            )?;
            acc.add_weighted(&rec, weight);
        }
    }
    let mut pooled = acc.finish();
    pooled.n_effective = dev.n_pulses * dist_a.survival * dist_b.survival;
    Ok(pooled)
}

/// Compensated accumulator over all 20 count fields of a [`CountsRecord`].
pub(crate) struct CountsAccumulator {
    fields: [math::CompensatedSum; 20],
}

impl CountsAccumulator {
    pub(crate) fn new() -> Self {
        Self {
            fields: [math::CompensatedSum::default(); 20],
        }
    }

    pub(crate) fn add_weighted(&mut self, rec: &CountsRecord, weight: f64) {
        self.fields[0].add(rec.n_zz * weight);
        self.fields[1].add(rec.m_zz * weight);
        for i in 0..3 {
            for j in 0..3 {
                self.fields[2 + 2 * (3 * i + j)].add(rec.n_x[i][j] * weight);
                self.fields[3 + 2 * (3 * i + j)].add(rec.m_x[i][j] * weight);
            }
        }
    }

    pub(crate) fn finish(&self) -> CountsRecord {
        let mut rec = CountsRecord::zero();
        rec.n_zz = self.fields[0].total();
        rec.m_zz = self.fields[1].total();
        for i in 0..3 {
            for j in 0..3 {
                rec.n_x[i][j] = self.fields[2 + 2 * (3 * i + j)].total();
                rec.m_x[i][j] = self.fields[3 + 2 * (3 * i + j)].total();
            }
        }
        rec
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    //! Shared device/protocol fixtures for the 30 dB and 33 dB operating
    //! points used across the test suite.
    use super::*;

    pub const ETA_25DB: f64 = 0.003162277660168379;
    pub const ETA_5DB: f64 = 0.31622776601683794;
    pub const ETA_8DB: f64 = 0.15848931924611134;

    pub fn device() -> DeviceParams {
        DeviceParams {
            dark_count: 3.65e-7,
            detector_eff: 0.84,
            misalign_z: 0.004,
            misalign_x: 0.02,
            n_pulses: 1e12,
            ec_efficiency: 1.16,
            gamma: 5.3,
        }
    }

    pub fn alice_30db() -> ProtocolParams {
        ProtocolParams {
            signal: 0.593,
            mu: 0.427,
            nu: 0.101,
            omega: 0.0,
            p_signal: 0.588,
            p_mu: 0.045,
            p_nu: 0.238,
        }
    }

    pub fn bob_30db() -> ProtocolParams {
        ProtocolParams {
            signal: 0.181,
            mu: 0.076,
            nu: 0.018,
            omega: 0.0,
            p_signal: 0.601,
            p_mu: 0.041,
            p_nu: 0.240,
        }
    }

    pub fn alice_33db() -> ProtocolParams {
        ProtocolParams {
            signal: 0.556,
            mu: 0.463,
            nu: 0.114,
            omega: 0.0,
            p_signal: 0.597,
            p_mu: 0.039,
            p_nu: 0.245,
        }
    }

    pub fn bob_33db() -> ProtocolParams {
        ProtocolParams {
            signal: 0.192,
            mu: 0.088,
            nu: 0.021,
            omega: 0.0,
            p_signal: 0.582,
            p_mu: 0.035,
            p_nu: 0.249,
        }
    }
}
