//! Transmittance post-selection: ARTS threshold scans and P-RTS prefixed
//! thresholds.
//!
//! Both strategies share one evaluation path: truncate the two channels'
//! binned transmittance distributions at a threshold pair, pool the counts
//! over the retained bins with N_eff = N·survival_a·survival_b, and run the
//! finite-key analysis. Rates are reported per *transmitted* pulse pair, so
//! the cost of rejecting data is internal to the number being maximised.
//!
//! [`arts_scan`] evaluates the full threshold grid (by default the bin
//! edges of each distribution, with 0 prepended). It precomputes one
//! counts table per bin pair and turns them into 2-D suffix sums, so the
//! whole scan costs O(bins²) count additions rather than re-evaluating the
//! closed forms per grid point. [`prts_threshold`] runs the same scan on
//! purely model-predicted distributions — fixing the threshold before any
//! data exists — and then sharpens the winning cell on a twice-refined
//! discretisation. [`arts_scan_binned`] accepts externally measured
//! per-bin counts records in place of model-generated ones.

use alloc::vec::Vec;

use crate::channel::{discretize, truncate_above, ChannelSpec, TransmittanceDistribution};
use crate::detection::{
    counts_table, pooled_counts, CountsAccumulator, CountsRecord, DeviceParams, ProtocolParams,
};
use crate::finite_key::{key_rate_with, BoundSettings, FiniteKeyError, KeyRateResult};
use crate::math;

/// Transmittance cutoffs applied to the two channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThresholdPair {
    pub eta_th_a: f64,
    pub eta_th_b: f64,
}

/// One evaluated grid point of a threshold scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub thresholds: ThresholdPair,
    /// Secure bits per transmitted pulse pair.
    pub rate: f64,
    pub survival_a: f64,
    pub survival_b: f64,
}

/// A rate surface over a threshold grid, row-major in the Alice cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    pub points: Vec<SurfacePoint>,
    pub argmax: ThresholdPair,
    pub max_rate: f64,
}

impl RateSurface {
    pub fn at(&self, ia: usize, ib: usize) -> &SurfacePoint {
        &self.points[ia * self.grid_b.len() + ib]
    }
}

/// A prefixed threshold decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PrtsResult {
    /// The prefixed cutoff pair after local refinement.
    pub threshold: ThresholdPair,
    /// Predicted rate at `threshold` (per transmitted pulse pair).
    pub predicted_rate: f64,
    /// The scan argmax before refinement; equals the ARTS argmax on the
    /// same model inputs by construction.
    pub coarse: ThresholdPair,
    pub coarse_rate: f64,
    pub surface: RateSurface,
}

/// Channel and protocol configuration of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPointSpec {
    pub spec_a: ChannelSpec,
    pub spec_b: ChannelSpec,
    pub alice: ProtocolParams,
    pub bob: ProtocolParams,
}

/// One evaluated sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub total_loss_db: f64,
    /// No-rejection (thresholds 0) turbulence-averaged rate.
    pub rate_static: f64,
    /// Rate at the prefixed threshold.
    pub rate_prts: f64,
    pub threshold: ThresholdPair,
}

/// A static-vs-P-RTS rate curve over channel loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    /// Highest loss with a positive no-rejection rate, if any.
    pub max_tolerable_static_db: Option<f64>,
    /// Highest loss with a positive P-RTS rate, if any.
    pub max_tolerable_prts_db: Option<f64>,
}

/// Externally supplied per-bin counts for the measured-data ARTS path.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCountsEntry {
    /// Probe-estimated transmittances this record was binned under.
    pub eta_a: f64,
    pub eta_b: f64,
    /// Counts observed in this bin pair; `n_effective` carries the pulse
    /// pairs attributed to the bin.
    pub counts: CountsRecord,
}

/// Threshold grids for a scan; `None` selects each distribution's bin
/// edges with 0 prepended.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub thresholds_a: Option<Vec<f64>>,
    pub thresholds_b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostselectionError {
    /// The model predicts zero rate at every threshold pair.
    BeyondKeyGenerationRange,
    /// Grid thresholds must be non-negative and sorted ascending.
    InvalidGrid,
    /// No binned entries supplied.
    NoEntries,
    Channel(crate::channel::ChannelError),
    FiniteKey(FiniteKeyError),
    Detection(crate::detection::DetectionError),
}

impl From<crate::channel::ChannelError> for PostselectionError {
    fn from(e: crate::channel::ChannelError) -> Self {
        Self::Channel(e)
    }
}

impl From<FiniteKeyError> for PostselectionError {
    fn from(e: FiniteKeyError) -> Self {
        Self::FiniteKey(e)
    }
}

impl From<crate::detection::DetectionError> for PostselectionError {
    fn from(e: crate::detection::DetectionError) -> Self {
        Self::Detection(e)
    }
}

impl core::fmt::Display for PostselectionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BeyondKeyGenerationRange => write!(f, "channel beyond key-generation range"),
            Self::InvalidGrid => write!(f, "threshold grid must be sorted and non-negative"),
            Self::NoEntries => write!(f, "no binned counts entries supplied"),
            Self::Channel(e) => write!(f, "{e}"),
            Self::FiniteKey(e) => write!(f, "{e}"),
            Self::Detection(e) => write!(f, "{e}"),
        }
    }
}

/// Rate (per transmitted pulse pair) after truncating both distributions at
/// a threshold pair. Zero when either channel rejects everything.
pub fn rate_at_thresholds(
    th: ThresholdPair,
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dist_a: &TransmittanceDistribution,
    dist_b: &TransmittanceDistribution,
    dev: &DeviceParams,
    settings: BoundSettings,
) -> Result<f64, PostselectionError> {
    Ok(key_rate_at_thresholds(th, alice, bob, dist_a, dist_b, dev, settings)?.rate)
}

/// Full key-rate result behind [`rate_at_thresholds`].
pub fn key_rate_at_thresholds(
    th: ThresholdPair,
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dist_a: &TransmittanceDistribution,
    dist_b: &TransmittanceDistribution,
    dev: &DeviceParams,
    settings: BoundSettings,
) -> Result<KeyRateResult, PostselectionError> {
    let (kept_a, _) = truncate_above(dist_a, th.eta_th_a)?;
    let (kept_b, _) = truncate_above(dist_b, th.eta_th_b)?;
    let counts = pooled_counts(alice, bob, &kept_a, &kept_b, dev)?;
    Ok(key_rate_with(settings, &counts, alice, bob, dev)?)
}

fn default_grid(dist: &TransmittanceDistribution) -> Vec<f64> {
    let mut grid = Vec::with_capacity(dist.bins.len().max(1));
    grid.push(0.0);
    for bin in dist.bins.iter().skip(1) {
        grid.push(bin.eta_low);
    }
    grid
}

fn check_grid(grid: &[f64]) -> Result<(), PostselectionError> {
    if grid.is_empty() || grid[0] < 0.0 {
        return Err(PostselectionError::InvalidGrid);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PostselectionError::InvalidGrid);
    }
    Ok(())
}

/// Index of the first bin retained at each threshold (bins sorted by
/// `eta_repr`; retention means `eta_repr >= threshold`).
fn retention_offsets(dist: &TransmittanceDistribution, grid: &[f64]) -> Vec<usize> {
    grid.iter()
        .map(|&th| dist.bins.partition_point(|bin| bin.eta_repr < th))
        .collect()
}

/// Exhaustive ARTS scan over a threshold grid.
///
/// Counts tables are evaluated once per bin pair, suffix-summed in both
/// axes with compensated accumulation, and each grid point is then a
/// constant-time lookup feeding the finite-key analysis.
pub fn arts_scan(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dist_a: &TransmittanceDistribution,
    dist_b: &TransmittanceDistribution,
    dev: &DeviceParams,
    grid: &GridSpec,
    settings: BoundSettings,
) -> Result<RateSurface, PostselectionError> {
    let grid_a = match &grid.thresholds_a {
        Some(g) => g.clone(),
        None => default_grid(dist_a),
    };
    let grid_b = match &grid.thresholds_b {
        Some(g) => g.clone(),
        None => default_grid(dist_b),
    };
    check_grid(&grid_a)?;
    check_grid(&grid_b)?;

    let na = dist_a.bins.len();
    let nb = dist_b.bins.len();

    // one combined-form counts table per bin pair, weighted by joint mass
    let mut tables: Vec<CountsRecord> = Vec::with_capacity(na * nb);
    for bin_a in &dist_a.bins {
        for bin_b in &dist_b.bins {
            let rec = counts_table(
                alice,
                bob,
                bin_a.eta_repr.min(1.0),
                bin_b.eta_repr.min(1.0),
                dev,
                dev.n_pulses,
            )?;
            let w = bin_a.probability * bin_b.probability;
            tables.push(scale_record(&rec, w));
        }
    }

    // suffix sums along Bob's axis then Alice's: pure additions, so no
    // cancellation enters the cumulative tables
    let mut suffix: Vec<CountsRecord> = alloc::vec![CountsRecord::zero(); na * nb];
    for ia in 0..na {
        let mut acc = CountsAccumulator::new();
        for ib in (0..nb).rev() {
            acc.add_weighted(&tables[ia * nb + ib], 1.0);
            suffix[ia * nb + ib] = acc.finish();
        }
    }
    for ib in 0..nb {
        let mut acc = CountsAccumulator::new();
        for ia in (0..na).rev() {
            acc.add_weighted(&suffix[ia * nb + ib], 1.0);
            suffix[ia * nb + ib] = acc.finish();
        }
    }

    let mass_suffix = |bins: &[crate::channel::TransmittanceBin]| -> Vec<f64> {
        let mut out = alloc::vec![0.0; bins.len() + 1];
        let mut acc = math::CompensatedSum::default();
        for (i, bin) in bins.iter().enumerate().rev() {
            acc.add(bin.probability);
            out[i] = acc.total();
        }
        out
    };
    let mass_a = mass_suffix(&dist_a.bins);
    let mass_b = mass_suffix(&dist_b.bins);

    let offs_a = retention_offsets(dist_a, &grid_a);
    let offs_b = retention_offsets(dist_b, &grid_b);

    let mut points = Vec::with_capacity(grid_a.len() * grid_b.len());
    let mut best_rate = f64::NEG_INFINITY;
    let mut argmax = ThresholdPair::default();
    for (ga, &oa) in grid_a.iter().zip(&offs_a) {
        for (gb, &ob) in grid_b.iter().zip(&offs_b) {
            let survival_a = if dist_a.survival > 0.0 {
                mass_a[oa] / dist_a.survival
            } else {
                0.0
            };
            let survival_b = if dist_b.survival > 0.0 {
                mass_b[ob] / dist_b.survival
            } else {
                0.0
            };
            let rate = if oa >= na || ob >= nb {
                0.0
            } else {
                let mut counts = suffix[oa * nb + ob];
                counts.n_effective = dev.n_pulses * mass_a[oa] * mass_b[ob];
                key_rate_with(settings, &counts, alice, bob, dev)?.rate
            };
            let thresholds = ThresholdPair {
                eta_th_a: *ga,
                eta_th_b: *gb,
            };
            if rate > best_rate {
                best_rate = rate;
                argmax = thresholds;
            }
            points.push(SurfacePoint {
                thresholds,
                rate,
                survival_a,
                survival_b,
            });
        }
    }

    Ok(RateSurface {
        grid_a,
        grid_b,
        points,
        argmax,
        max_rate: best_rate.max(0.0),
    })
}

fn scale_record(rec: &CountsRecord, w: f64) -> CountsRecord {
    let mut out = *rec;
    out.n_zz *= w;
    out.m_zz *= w;
    for i in 0..3 {
        for j in 0..3 {
            out.n_x[i][j] *= w;
            out.m_x[i][j] *= w;
        }
    }
    out.n_effective *= w;
    out
}

/// ARTS over externally measured per-bin counts records.
///
/// The grid defaults to the distinct transmittance values present in the
/// entries (with 0 prepended); retention keeps entries with both
/// transmittances at or above the cutoffs, and the retained records are
/// summed with compensated accumulation.
pub fn arts_scan_binned(
    entries: &[BinnedCountsEntry],
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    dev: &DeviceParams,
    grid: &GridSpec,
    settings: BoundSettings,
) -> Result<RateSurface, PostselectionError> {
    if entries.is_empty() {
        return Err(PostselectionError::NoEntries);
    }
    let distinct = |pick: &dyn Fn(&BinnedCountsEntry) -> f64| -> Vec<f64> {
        let mut vals: Vec<f64> = entries.iter().map(pick).collect();
        vals.push(0.0);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        vals.dedup();
        vals
    };
    let grid_a = match &grid.thresholds_a {
        Some(g) => g.clone(),
        None => distinct(&|e| e.eta_a),
    };
    let grid_b = match &grid.thresholds_b {
        Some(g) => g.clone(),
        None => distinct(&|e| e.eta_b),
    };
    check_grid(&grid_a)?;
    check_grid(&grid_b)?;

    let mut points = Vec::with_capacity(grid_a.len() * grid_b.len());
    let mut best_rate = f64::NEG_INFINITY;
    let mut argmax = ThresholdPair::default();
    let total_eff: f64 = entries.iter().map(|e| e.counts.n_effective).sum();
    for &ta in &grid_a {
        for &tb in &grid_b {
            let mut acc = CountsAccumulator::new();
            let mut eff = math::CompensatedSum::default();
            for entry in entries {
                if entry.eta_a >= ta && entry.eta_b >= tb {
                    acc.add_weighted(&entry.counts, 1.0);
                    eff.add(entry.counts.n_effective);
                }
            }
            let mut counts = acc.finish();
            counts.n_effective = eff.total();
            let rate = key_rate_with(settings, &counts, alice, bob, dev)?.rate;
            let thresholds = ThresholdPair {
                eta_th_a: ta,
                eta_th_b: tb,
            };
            if rate > best_rate {
                best_rate = rate;
                argmax = thresholds;
            }
            points.push(SurfacePoint {
                thresholds,
                rate,
                survival_a: if total_eff > 0.0 {
                    counts.n_effective / total_eff
                } else {
                    0.0
                },
                survival_b: 1.0,
            });
        }
    }
    Ok(RateSurface {
        grid_a,
        grid_b,
        points,
        argmax,
        max_rate: best_rate.max(0.0),
    })
}

/// Picks the prefixed threshold pair from channel statistics and device
/// calibration alone: an [`arts_scan`] over the model-predicted
/// distributions, whose argmax is then sharpened with one local refinement
/// pass on a twice-finer discretisation.
///
/// Errors with [`PostselectionError::BeyondKeyGenerationRange`] when the
/// model predicts zero rate at every cutoff.
pub fn prts_threshold(
    alice: &ProtocolParams,
    bob: &ProtocolParams,
    spec_a: &ChannelSpec,
    spec_b: &ChannelSpec,
    dev: &DeviceParams,
    n_bins: usize,
    settings: BoundSettings,
) -> Result<PrtsResult, PostselectionError> {
    let dist_a = discretize(spec_a, n_bins)?;
    let dist_b = discretize(spec_b, n_bins)?;
    let surface = arts_scan(
        alice,
        bob,
        &dist_a,
        &dist_b,
        dev,
        &GridSpec::default(),
        settings,
    )?;
    if surface.max_rate <= 0.0 {
        return Err(PostselectionError::BeyondKeyGenerationRange);
    }
    let coarse = surface.argmax;
    let coarse_rate = surface.max_rate;

    // one refinement pass: double the bin resolution and walk the finer
    // edges inside the winning cell's neighbourhood
    let window = |grid: &[f64], th: f64, dist: &TransmittanceDistribution| -> (f64, f64) {
        let idx = grid.partition_point(|&g| g < th).min(grid.len() - 1);
        let lo = if idx == 0 { 0.0 } else { grid[idx - 1] };
        let hi = if idx + 1 < grid.len() {
            grid[idx + 1]
        } else {
            dist.bins.last().map(|b| b.eta_high).unwrap_or(th)
        };
        (lo, hi)
    };
    let (lo_a, hi_a) = window(&surface.grid_a, coarse.eta_th_a, &dist_a);
    let (lo_b, hi_b) = window(&surface.grid_b, coarse.eta_th_b, &dist_b);

    let fine_a = discretize(spec_a, (2 * n_bins).max(2))?;
    let fine_b = discretize(spec_b, (2 * n_bins).max(2))?;
    let fine_grid = |dist: &TransmittanceDistribution, lo: f64, hi: f64, keep: f64| -> Vec<f64> {
        let mut g: Vec<f64> = default_grid(dist)
            .into_iter()
            .filter(|&x| x >= lo && x <= hi)
            .collect();
        g.push(keep);
        g.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        g.dedup();
        g
    };
    let refined = arts_scan(
        alice,
        bob,
        &fine_a,
        &fine_b,
        dev,
        &GridSpec {
            thresholds_a: Some(fine_grid(&fine_a, lo_a, hi_a, coarse.eta_th_a)),
            thresholds_b: Some(fine_grid(&fine_b, lo_b, hi_b, coarse.eta_th_b)),
        },
        settings,
    )?;

    let (threshold, predicted_rate) = if refined.max_rate > coarse_rate {
        (refined.argmax, refined.max_rate)
    } else {
        (coarse, coarse_rate)
    };
    Ok(PrtsResult {
        threshold,
        predicted_rate,
        coarse,
        coarse_rate,
        surface,
    })
}

/// Evaluates the static (no-rejection) and P-RTS rates across a set of
/// channel configurations and finds the highest loss each strategy
/// tolerates.
pub fn loss_sweep(
    points: &[SweepPointSpec],
    dev: &DeviceParams,
    n_bins: usize,
    settings: BoundSettings,
) -> Result<SweepCurve, PostselectionError> {
    let mut out = Vec::with_capacity(points.len());
    for point in points {
        let dist_a = discretize(&point.spec_a, n_bins)?;
        let dist_b = discretize(&point.spec_b, n_bins)?;
        let rate_static = rate_at_thresholds(
            ThresholdPair::default(),
            &point.alice,
            &point.bob,
            &dist_a,
            &dist_b,
            dev,
            settings,
        )?;
        let (rate_prts, threshold) = match prts_threshold(
            &point.alice,
            &point.bob,
            &point.spec_a,
            &point.spec_b,
            dev,
            n_bins,
            settings,
        ) {
            Ok(prts) => (prts.predicted_rate, prts.threshold),
            Err(PostselectionError::BeyondKeyGenerationRange) => (0.0, ThresholdPair::default()),
            Err(e) => return Err(e),
        };
        let total_loss_db = -10.0 * math::log10(point.spec_a.eta0 * point.spec_b.eta0);
        out.push(SweepPoint {
            total_loss_db,
            rate_static,
            rate_prts,
            threshold,
        });
    }
    let max_loss = |pick: &dyn Fn(&SweepPoint) -> f64| -> Option<f64> {
        out.iter()
            .filter(|p| pick(p) > 0.0)
            .map(|p| p.total_loss_db)
            .fold(None, |acc, x| Some(acc.map_or(x, |a: f64| a.max(x))))
    };
    Ok(SweepCurve {
        max_tolerable_static_db: max_loss(&|p| p.rate_static),
        max_tolerable_prts_db: max_loss(&|p| p.rate_prts),
        points: out,
    })
}
