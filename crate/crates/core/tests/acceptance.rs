//! Acceptance gate: one test per release criterion, each printing a
//! `criterion N (<name>): PASS/FAIL` line with the measured numbers.
//!
//! Criteria 1-3 probe the published 30/33 dB operating points. Under the
//! validated (subtraction) single-photon estimators those configurations
//! certify zero key, so the three tests fail by design rather than being
//! weakened; the measured values are printed for the record. See the
//! README's "Operating envelope" section for the loss window where every
//! structural behaviour they describe does hold.

use std::time::Instant;

use mdiqkd_core::*;

mod fixtures {
    use mdiqkd_core::{DeviceParams, ProtocolParams};

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

    /// Near-symmetric operating point inside the key-generating envelope.
    pub fn envelope_party() -> ProtocolParams {
        ProtocolParams {
            signal: 0.32,
            mu: 0.28,
            nu: 0.045,
            omega: 0.0,
            p_signal: 0.51,
            p_mu: 0.04,
            p_nu: 0.31,
        }
    }
}

use fixtures::*;

fn resolved_settings(alice: &ProtocolParams, bob: &ProtocolParams) -> BoundSettings {
    resolve_bound_settings(PrefactorConvention::AliceIntensities, alice, bob, &device())
        .expect("a valid estimator form must exist")
        .0
}

/// Criterion 1 — P-RTS loss extension at the published parameters:
/// the sweep must show positive P-RTS key where the static rate is zero,
/// with a 2 ± 1 dB extension, in under 5 minutes for 15 points at
/// 100 bins/channel.
#[test]
fn criterion_1_prts_loss_extension() {
    let started = Instant::now();
    let dev = device();
    let points: Vec<SweepPointSpec> = (0..15)
        .map(|k| {
            let total = 28.0 + 0.5 * k as f64;
            let (alice, bob) = if total <= 31.5 {
                (alice_30db(), bob_30db())
            } else {
                (alice_33db(), bob_33db())
            };
            SweepPointSpec {
                spec_a: ChannelSpec::from_loss_db(25.0, 1.0).unwrap(),
                spec_b: ChannelSpec::from_loss_db(total - 25.0, 1.0).unwrap(),
                alice,
                bob,
            }
        })
        .collect();
    let settings = resolved_settings(&alice_30db(), &bob_30db());
    let curve = loss_sweep(&points, &dev, 100, settings).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let rescued = curve
        .points
        .iter()
        .any(|p| p.rate_static == 0.0 && p.rate_prts > 0.0);
    let extension = match (curve.max_tolerable_static_db, curve.max_tolerable_prts_db) {
        (Some(s), Some(p)) => Some(p - s),
        _ => None,
    };
    let extension_ok = extension.map(|e| (1.0..=3.0).contains(&e)).unwrap_or(false);
    let runtime_ok = elapsed < 300.0;
    let pass = rescued && extension_ok && runtime_ok;
    println!(
        "criterion 1 (P-RTS loss extension): {} — rescued points: {}, extension: {}, \
         runtime {:.1} s (< 300 s: {})",
        if pass { "PASS" } else { "FAIL" },
        rescued,
        extension
            .map(|e| format!("{e:.2} dB"))
            .unwrap_or_else(|| "undefined (no positive rates on the sweep)".into()),
        elapsed,
        runtime_ok
    );
    assert!(
        runtime_ok,
        "sweep exceeded the 5-minute budget: {elapsed:.1} s"
    );
    assert!(
        rescued,
        "no sweep point had zero static rate with positive P-RTS rate"
    );
    assert!(
        extension_ok,
        "P-RTS extension {extension:?} outside 2 +/- 1 dB"
    );
}

/// Criterion 2 — 33 dB behaviour: zero static rate, positive P-RTS rate.
#[test]
fn criterion_2_thirty_three_db_behavior() {
    let dev = device();
    let (alice, bob) = (alice_33db(), bob_33db());
    let settings = resolved_settings(&alice, &bob);
    let spec_a = ChannelSpec::from_loss_db(25.0, 1.0).unwrap();
    let spec_b = ChannelSpec::from_loss_db(8.0, 1.0).unwrap();
    let dist_a = discretize(&spec_a, 100).unwrap();
    let dist_b = discretize(&spec_b, 100).unwrap();
    let rate_static = rate_at_thresholds(
        ThresholdPair::default(),
        &alice,
        &bob,
        &dist_a,
        &dist_b,
        &dev,
        settings,
    )
    .unwrap();
    let rate_prts = match prts_threshold(&alice, &bob, &spec_a, &spec_b, &dev, 100, settings) {
        Ok(prts) => prts.predicted_rate,
        Err(PostselectionError::BeyondKeyGenerationRange) => 0.0,
        Err(e) => panic!("{e}"),
    };
    let pass = rate_static == 0.0 && rate_prts > 0.0;
    println!(
        "criterion 2 (33 dB behaviour): {} — static rate {:.3e}, P-RTS rate {:.3e}",
        if pass { "PASS" } else { "FAIL" },
        rate_static,
        rate_prts
    );
    assert_eq!(rate_static, 0.0, "static rate must vanish at 33 dB");
    assert!(
        rate_prts > 0.0,
        "P-RTS must certify a positive rate at 33 dB (got {rate_prts:.3e})"
    );
}

/// Criterion 3 — ARTS argmax at 30 dB within a factor of 2 of the
/// published optimal thresholds (0.0026, 0.18).
#[test]
fn criterion_3_optimal_thresholds_thirty_db() {
    let dev = device();
    let (alice, bob) = (alice_30db(), bob_30db());
    let settings = resolved_settings(&alice, &bob);
    let dist_a = discretize(&ChannelSpec::from_loss_db(25.0, 1.0).unwrap(), 100).unwrap();
    let dist_b = discretize(&ChannelSpec::from_loss_db(5.0, 1.0).unwrap(), 100).unwrap();
    let surface = arts_scan(
        &alice,
        &bob,
        &dist_a,
        &dist_b,
        &dev,
        &GridSpec::default(),
        settings,
    )
    .unwrap();
    let th = surface.argmax;
    let a_ok = (0.0013..=0.0052).contains(&th.eta_th_a);
    let b_ok = (0.09..=0.36).contains(&th.eta_th_b);
    let pass = a_ok && b_ok && surface.max_rate > 0.0;
    println!(
        "criterion 3 (optimal thresholds at 30 dB): {} — argmax ({:.4}, {:.4}) vs (0.0026, 0.18) \
         x2 tolerance, max rate {:.3e}",
        if pass { "PASS" } else { "FAIL" },
        th.eta_th_a,
        th.eta_th_b,
        surface.max_rate
    );
    assert!(
        surface.max_rate > 0.0,
        "the 30 dB threshold surface is zero everywhere"
    );
    assert!(
        a_ok,
        "Alice threshold {} not within x2 of 0.0026",
        th.eta_th_a
    );
    assert!(b_ok, "Bob threshold {} not within x2 of 0.18", th.eta_th_b);
}

/// Test-side brute-force oracle for the single-photon pair: enumerate the
/// arrival patterns of an emitted (1,1) state and apply the per-case
/// Bell-event probabilities directly. Written independently of the
/// library's reference path.
fn single_photon_oracle(eta_a: f64, eta_b: f64, dev: &DeviceParams) -> (f64, f64) {
    let ca = eta_a * dev.detector_eff;
    let cb = eta_b * dev.detector_eff;
    let p_both = ca * cb;
    let p_one = ca * (1.0 - cb) + (1.0 - ca) * cb;
    // {1,1}: psi- at (1/2)(1-2e_dx), psi+ at (1/4)(1-2e_dx);
    // {1,0}/{0,1}: dark-count seeded, psi- and psi+ each at Y0
    let psi_minus = 0.5 * (1.0 - 2.0 * dev.misalign_x) * p_both + dev.dark_count * p_one;
    let psi_plus = 0.25 * (1.0 - 2.0 * dev.misalign_x) * p_both + dev.dark_count * p_one;
    let y11 = psi_minus + psi_plus;
    (y11, psi_plus / y11)
}

/// Criterion 4 — bound validity: with γ = 0, the yield lower bound and
/// phase-error upper bound must bracket the brute-force single-photon
/// values on a 20-point grid for both published configurations.
#[test]
fn criterion_4_bound_validity_oracle() {
    let mut dev = device();
    dev.gamma = 0.0;
    let mut violations = 0usize;
    let mut checked = 0usize;
    for (alice, bob) in [(alice_30db(), bob_30db()), (alice_33db(), bob_33db())] {
        let settings = resolved_settings(&alice, &bob);
        for (eta_a, eta_b) in finite_key_validation_grid() {
            let counts =
                counts_table_from_cases(&alice, &bob, eta_a, eta_b, &dev, dev.n_pulses).unwrap();
            let gains = gains_and_errors(&counts, &alice, &bob, &dev).unwrap();
            let (y_true, e_true) = single_photon_oracle(eta_a, eta_b, &dev);
            let y11 = y11_lower(&gains, &alice, &bob, settings).unwrap();
            let e11 = match e11_upper(&gains, y11, &alice, &bob, settings) {
                Ok(v) => v,
                Err(FiniteKeyError::YieldBoundVanished) => 1.0,
                Err(e) => panic!("{e}"),
            };
            checked += 1;
            if y11 > y_true * (1.0 + 1e-9) || e11 < e_true * (1.0 - 1e-9) {
                violations += 1;
                eprintln!(
                    "violation at eta=({eta_a:.4e},{eta_b:.4e}): y11 {y11:.4e} vs {y_true:.4e}, \
                     e11 {e11:.4} vs {e_true:.4}"
                );
            }
        }
    }
    let pass = violations == 0;
    println!(
        "criterion 4 (bound validity oracle): {} — {} violations over {} grid points",
        if pass { "PASS" } else { "FAIL" },
        violations,
        checked
    );
    assert_eq!(checked, 40);
    assert_eq!(violations, 0);
}

/// The 20-point grid of criterion 4 (reproduced here so the test pins it
/// independently of the library's internal validation grid).
fn finite_key_validation_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::with_capacity(20);
    for k in 0..10 {
        let total_db = 40.0 * k as f64 / 9.0;
        let sym = 10f64.powf(-total_db / 20.0);
        grid.push((sym, sym));
        grid.push((
            10f64.powf(-total_db * 5.0 / 60.0),
            10f64.powf(-total_db / 60.0),
        ));
    }
    grid
}

/// Criterion 5 — P-RTS equals the ARTS argmax on identical model inputs,
/// exactly.
#[test]
fn criterion_5_prts_arts_equivalence() {
    let dev = device();
    let party = envelope_party();
    let settings = resolved_settings(&party, &party);
    let spec = ChannelSpec::from_loss_db(10.0, 1.0).unwrap();
    let prts = prts_threshold(&party, &party, &spec, &spec, &dev, 60, settings).unwrap();
    let dist = discretize(&spec, 60).unwrap();
    let arts = arts_scan(
        &party,
        &party,
        &dist,
        &dist,
        &dev,
        &GridSpec::default(),
        settings,
    )
    .unwrap();
    let pass = prts.coarse == arts.argmax && prts.coarse_rate == arts.max_rate;
    println!(
        "criterion 5 (P-RTS/ARTS equivalence): {} — prefixed coarse ({:.5}, {:.5}) vs ARTS \
         argmax ({:.5}, {:.5}); refined rate {:.3e} >= coarse {:.3e}",
        if pass { "PASS" } else { "FAIL" },
        prts.coarse.eta_th_a,
        prts.coarse.eta_th_b,
        arts.argmax.eta_th_a,
        arts.argmax.eta_th_b,
        prts.predicted_rate,
        prts.coarse_rate
    );
    assert_eq!(prts.coarse, arts.argmax);
    assert_eq!(prts.coarse_rate, arts.max_rate);
    assert!(prts.predicted_rate >= prts.coarse_rate);
}

/// Criterion 6 — channel statistics: sampler mean within 1% of η₀ at 10⁶
/// samples, binned mass ≥ 0.999, KS distance sampler-vs-CDF < 0.005.
#[test]
fn criterion_6_channel_statistics() {
    let spec = ChannelSpec::new(ETA_25DB, 1.0).unwrap();
    let mut samples = sample_transmittance(&spec, 424242, 1_000_000).unwrap();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mean_err = (mean - spec.eta0).abs() / spec.eta0;

    let dist = discretize(&spec, 100).unwrap();
    let mass = dist.survival;

    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sigma = spec.sigma2.sqrt();
    let mu = spec.log_mean();
    let n = samples.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &eta) in samples.iter().enumerate() {
        let z = (eta.ln() - mu) / sigma;
        let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
        ks = ks
            .max((cdf - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - cdf).abs());
    }
    let pass = mean_err < 0.01 && mass >= 0.999 && ks < 0.005;
    println!(
        "criterion 6 (channel statistics): {} — sampler mean error {:.3e}, binned mass {:.6}, \
         KS distance {:.4e}",
        if pass { "PASS" } else { "FAIL" },
        mean_err,
        mass,
        ks
    );
    assert!(mean_err < 0.01);
    assert!(mass >= 0.999);
    assert!(ks < 0.005);
}

/// Criterion 7 — finite-key plumbing: γ ↔ ε round trip, exact count
/// recovery from gains, and rate monotonicity in statistics and
/// confidence.
#[test]
fn criterion_7_finite_key_plumbing() {
    // gamma = 5.3 <-> epsilon ~ 1.16e-7
    let eps = gamma_to_epsilon(5.3).unwrap();
    let round = epsilon_to_gamma(eps).unwrap();
    let eps_ok = (eps - 1.1580268079929177e-7).abs() / eps < 1e-9 && (round - 5.3).abs() < 1e-9;

    // gains x denominator recovers counts to machine precision
    let dev = device();
    let (alice, bob) = (alice_30db(), bob_30db());
    let counts = counts_table(&alice, &bob, ETA_25DB, ETA_5DB, &dev, dev.n_pulses).unwrap();
    let gains = gains_and_errors(&counts, &alice, &bob, &dev).unwrap();
    let mut recover_ok = true;
    for i in DecoyLevel::ALL {
        for j in DecoyLevel::ALL {
            let denom = dev.n_pulses * alice.probability(i) * bob.probability(j);
            let (n, m) = counts.x_pair(i, j);
            recover_ok &= (gains.pair(i, j).q * denom - n).abs() <= 1e-12 * n.max(1.0);
            recover_ok &= (gains.pair(i, j).t * denom - m).abs() <= 1e-12 * m.max(1.0);
        }
    }

    // monotonicity on a 10-point grid in N_eff and in gamma
    let party = envelope_party();
    let settings = resolved_settings(&party, &party);
    let eta = 10f64.powf(-0.95); // 9.5 dB per channel
    let mut mono_n = true;
    let mut last = -1.0;
    let mut best = 0.0;
    for k in 0..10 {
        let mut d = device();
        d.n_pulses = 1e9 * 4f64.powi(k);
        let c = counts_table(&party, &party, eta, eta, &d, d.n_pulses).unwrap();
        let r = key_rate_with(settings, &c, &party, &party, &d).unwrap();
        mono_n &= r.rate >= last - 1e-15;
        last = r.rate;
        best = r.rate;
    }
    let mut mono_g = best > 0.0;
    last = f64::INFINITY;
    for k in 0..10 {
        let mut d = device();
        d.gamma = 0.8 * k as f64;
        let c = counts_table(&party, &party, eta, eta, &d, d.n_pulses).unwrap();
        let r = key_rate_with(settings, &c, &party, &party, &d).unwrap();
        mono_g &= r.rate <= last + 1e-15;
        last = r.rate;
    }

    let pass = eps_ok && recover_ok && mono_n && mono_g;
    println!(
        "criterion 7 (finite-key plumbing): {} — eps round trip {}, count recovery {}, \
         monotone in N {}, monotone in -gamma {}",
        if pass { "PASS" } else { "FAIL" },
        eps_ok,
        recover_ok,
        mono_n,
        mono_g
    );
    assert!(eps_ok);
    assert!(recover_ok);
    assert!(mono_n);
    assert!(mono_g);
}

/// Criterion 8 — optimizer quality: GA ≥ 0.95 × the published-parameter
/// rate for both configurations, deterministic under a fixed seed, and
/// strictly better than the flux-symmetric heuristic at (25, 5).
#[test]
fn criterion_8_optimizer_quality() {
    let dev = device();
    let ga = GaConfig {
        seed: 20240807,
        ..GaConfig::default()
    };

    let table_genome = |a: &ProtocolParams, b: &ProtocolParams| -> Genome {
        [
            a.signal, a.mu, a.nu, a.p_signal, a.p_mu, a.p_nu, b.signal, b.mu, b.nu, b.p_signal,
            b.p_mu, b.p_nu,
        ]
    };

    let mut quality_ok = true;
    let mut detail = String::new();
    let mut free_30 = 0.0;
    for (label, eta_b, alice, bob) in [
        ("30dB", ETA_5DB, alice_30db(), bob_30db()),
        ("33dB", ETA_8DB, alice_33db(), bob_33db()),
    ] {
        let problem = OptimizationProblem::new(ETA_25DB, eta_b, dev);
        let outcome = optimize(&problem, &ga).unwrap();
        let published = fitness(&problem, &table_genome(&alice, &bob)).max(0.0);
        quality_ok &= outcome.best_rate >= 0.95 * published;
        if label == "30dB" {
            free_30 = outcome.best_rate;
        }
        detail.push_str(&format!(
            "{label}: GA {:.3e} vs published {:.3e}; ",
            outcome.best_rate, published
        ));
    }

    // determinism under a fixed seed
    let problem = OptimizationProblem::new(ETA_25DB, ETA_5DB, dev);
    let again = optimize(&problem, &ga).unwrap();
    let deterministic = again.best_rate == free_30 && again.trace.len() == ga.generations + 1;

    // flux-symmetric heuristic comparison at (25 dB, 5 dB)
    let mut locked_problem = problem;
    locked_problem.constraint = SignalConstraint::FluxBalancedZ;
    let locked = optimize(&locked_problem, &ga).unwrap();
    let strict_ok = free_30 > locked.best_rate;

    let pass = quality_ok && deterministic && strict_ok;
    println!(
        "criterion 8 (optimizer quality): {} — {}deterministic: {}; free {:.3e} vs \
         flux-symmetric {:.3e}",
        if pass { "PASS" } else { "FAIL" },
        detail,
        deterministic,
        free_30,
        locked.best_rate
    );
    assert!(
        quality_ok,
        "GA fell below 0.95x the published-parameter rate"
    );
    assert!(deterministic, "GA must be deterministic under a fixed seed");
    assert!(
        strict_ok,
        "free optimum {free_30:.3e} must strictly exceed the flux-symmetric optimum {:.3e}",
        locked.best_rate
    );
}

/// Criterion 9 — probe closed loop: < 2% median estimation error on
/// synthetic SNR-20 frames, Gaussian-fit and frame-sum areas within 2%,
/// full suite under 60 s.
#[test]
fn criterion_9_probe_closed_loop() {
    let started = Instant::now();
    let frame_at = |eta: f64, noise: f64, seed: u64| {
        synthetic_frame(
            &SyntheticFrameSpec {
                amplitude: eta,
                noise_rms: noise,
                ..SyntheticFrameSpec::default()
            },
            seed,
        )
    };

    // calibrate on noisy frames averaged per programmed level
    let mut pairs = Vec::new();
    for level in 1..=10 {
        let eta = level as f64 / 10.0;
        let mut area = 0.0;
        for rep in 0..25 {
            let frame = frame_at(eta, eta / 20.0, (level * 100 + rep) as u64);
            area += gaussian_fit(&frame).unwrap().area;
        }
        pairs.push((area / 25.0, eta));
    }
    let cal = fit_calibration(&pairs, 3).unwrap();

    // closed loop at SNR 20
    let mut errors = Vec::new();
    for k in 0..400u64 {
        let truth = 0.1 + 0.9 * ((k % 37) as f64 / 36.0);
        let frame = frame_at(truth, truth / 20.0, 7_000 + k);
        let est = estimate_transmittance(&frame, &cal, AreaMethod::Gaussian).unwrap();
        errors.push((est.eta - truth).abs() / truth);
    }
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_err = errors[errors.len() / 2];

    // area agreement between the two extractors on clean frames
    let mut worst_gap = 0.0f64;
    for level in 1..=10 {
        let eta = level as f64 / 10.0;
        let frame = frame_at(eta, 0.0, 0);
        let fit_area = gaussian_fit(&frame).unwrap().area;
        let sum_area = frame_sum(&frame);
        worst_gap = worst_gap.max((fit_area - sum_area).abs() / fit_area);
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = median_err < 0.02 && worst_gap < 0.02 && elapsed < 60.0;
    println!(
        "criterion 9 (probe closed loop): {} — median error {:.3}%, worst area gap {:.3}%, \
         {:.1} s",
        if pass { "PASS" } else { "FAIL" },
        100.0 * median_err,
        100.0 * worst_gap,
        elapsed
    );
    assert!(median_err < 0.02, "median estimation error {median_err:.4}");
    assert!(worst_gap < 0.02, "area methods disagree by {worst_gap:.4}");
    assert!(elapsed < 60.0, "probe suite took {elapsed:.1} s");
}
