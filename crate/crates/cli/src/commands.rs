//! The six pipeline commands. Each one is deterministic given its
//! configuration: all randomness is seeded from the config (or the --seed
//! override), and internal parallelism never changes results.

use std::path::Path;
use std::time::Instant;

use mdiqkd_core::{
    arts_scan, discretize, fit_calibration, gains_and_errors, key_rate_with, loss_sweep,
    optimize_with, pooled_counts, prts_threshold, resolve_bound_settings, synthetic_frame,
    truncate_above, validate_bound_settings, AreaMethod, BoundSettings, ChannelSpec, CountsRecord,
    DecoyLevel, FitnessEvaluator, GaConfig, Genome, GridSpec, KeyRateResult, OptimizationProblem,
    PostselectionError, ProbeFrame, ProtocolParams, RateSurface, SplitMix64, SweepPointSpec,
    SyntheticFrameSpec, TransmittanceDistribution, YieldBoundForm,
};

use crate::config::{ExperimentConfig, ProbeConfig, ProbeMode, SweepSplit};
use crate::frames;
use crate::output::{log10_or_sentinel, OutputDir};

/// Exit code 2: configuration problems. Exit code 1: model/domain and IO
/// failures at run time.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Model(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Model(_) | Self::Io(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Model(m) | Self::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn model_err(e: impl std::fmt::Display) -> CliError {
    CliError::Model(e.to_string())
}

/// Applies the estimator policy: a forced form must pass the validity
/// oracle or the run aborts; `auto` tries the printed form and falls back
/// to the subtraction form. Returns the settings plus a metadata line.
fn resolve_settings(
    cfg: &ExperimentConfig,
    alice: &ProtocolParams,
    bob: &ProtocolParams,
) -> Result<(BoundSettings, String), CliError> {
    if let Some(forced) = cfg.forced_settings() {
        let report = validate_bound_settings(forced, alice, bob, &cfg.device).map_err(model_err)?;
        if report.violations > 0 {
            return Err(CliError::Model(format!(
                "bound form {} under the {} convention failed the validity oracle \
                 ({}/{} grid points violated); aborting",
                forced.form.label(),
                forced.convention.label(),
                report.violations,
                report.points
            )));
        }
        return Ok((
            forced,
            format!("bound_form = {} (forced, validated)", forced.form.label()),
        ));
    }
    let (settings, _report) =
        resolve_bound_settings(cfg.analysis.convention, alice, bob, &cfg.device)
            .map_err(model_err)?;
    let note = if settings.form == YieldBoundForm::PrintedAllPlus {
        format!("bound_form = {} (auto, validated)", settings.form.label())
    } else {
        format!(
            "bound_form = {} (auto fallback: printed-all-plus rejected by the validity oracle)",
            settings.form.label()
        )
    };
    Ok((settings, note))
}

fn discretized(
    cfg: &ExperimentConfig,
) -> Result<(TransmittanceDistribution, TransmittanceDistribution), CliError> {
    let da = discretize(&cfg.channel_a, cfg.analysis.n_bins).map_err(model_err)?;
    let db = discretize(&cfg.channel_b, cfg.analysis.n_bins).map_err(model_err)?;
    for (name, spec) in [("alice", &cfg.channel_a), ("bob", &cfg.channel_b)] {
        let mass = spec.mass_above_unity();
        if mass > 1e-4 {
            eprintln!(
                "warning: channel.{name} places {mass:.2e} probability above unit transmittance; \
                 evaluation clamps it to 1"
            );
        }
    }
    Ok((da, db))
}

fn distribution_rows(dist: &TransmittanceDistribution) -> Vec<String> {
    dist.bins
        .iter()
        .map(|b| {
            format!(
                "{:e},{:e},{:e},{:e}",
                b.eta_low, b.eta_high, b.eta_repr, b.probability
            )
        })
        .collect()
}

fn counts_rows(counts: &CountsRecord) -> Vec<String> {
    let mut rows = vec![format!("zz,{:e},{:e}", counts.n_zz, counts.m_zz)];
    for i in DecoyLevel::ALL {
        for j in DecoyLevel::ALL {
            let (n, m) = counts.x_pair(i, j);
            rows.push(format!("x_{}_{},{:e},{:e}", i.label(), j.label(), n, m));
        }
    }
    rows
}

fn rate_json(result: &KeyRateResult, note: &str) -> String {
    let shortfall = match result.shortfall {
        Some(s) => format!("\"{}\"", s.label()),
        None => "null".to_string(),
    };
    format!(
        "{{\"rate\":{:e},\"raw_rate\":{:e},\"y11_low\":{:e},\"e11_up\":{:e},\"q_zz\":{:e},\
         \"e_zz\":{:e},\"survival_fraction\":{:e},\"n_effective\":{:e},\"secret_bits\":{:e},\
         \"bound_form\":\"{}\",\"shortfall\":{},\"note\":\"{}\"}}",
        result.rate,
        result.raw_rate,
        result.y11_low,
        result.e11_up,
        result.q_zz,
        result.e_zz,
        result.survival_fraction,
        result.n_effective,
        result.secret_bits,
        result.bound_form.label(),
        shortfall,
        note
    )
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let (alice, bob) = cfg
        .require_parties()
        .map_err(|e| CliError::Config(e.message))?;
    let (settings, note) = resolve_settings(cfg, &alice, &bob)?;
    let (da, db) = discretized(cfg)?;
    let (kept_a, survival_a) = truncate_above(&da, cfg.thresholds.eta_th_a).map_err(model_err)?;
    let (kept_b, survival_b) = truncate_above(&db, cfg.thresholds.eta_th_b).map_err(model_err)?;
    let counts = pooled_counts(&alice, &bob, &kept_a, &kept_b, &cfg.device).map_err(model_err)?;
    let result = key_rate_with(settings, &counts, &alice, &bob, &cfg.device).map_err(model_err)?;

    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;
    out.write_csv(
        "channel_alice.csv",
        "eta_low,eta_high,eta_repr,probability",
        &distribution_rows(&da),
    )?;
    out.write_csv(
        "channel_bob.csv",
        "eta_low,eta_high,eta_repr,probability",
        &distribution_rows(&db),
    )?;
    out.write_csv("counts.csv", "label,n,m", &counts_rows(&counts))?;

    let gains = gains_and_errors(&counts, &alice, &bob, &cfg.device).map_err(model_err)?;
    let mut gain_rows = Vec::new();
    for i in DecoyLevel::ALL {
        for j in DecoyLevel::ALL {
            let p = gains.pair(i, j);
            gain_rows.push(format!(
                "{}_{},{:e},{:e},{:e},{:e},{:e},{:e}",
                i.label(),
                j.label(),
                p.q,
                p.q_low,
                p.q_up,
                p.t,
                p.t_low,
                p.t_up
            ));
        }
    }
    out.write_csv("gains.csv", "pair,q,q_low,q_up,t,t_low,t_up", &gain_rows)?;

    out.write_csv(
        "rate.csv",
        "rate,raw_rate,y11_low,e11_up,q_zz,e_zz,survival_fraction,n_effective,secret_bits,bound_form,shortfall",
        &[format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            result.rate,
            result.raw_rate,
            result.y11_low,
            result.e11_up,
            result.q_zz,
            result.e_zz,
            result.survival_fraction,
            result.n_effective,
            result.secret_bits,
            result.bound_form.label(),
            result.shortfall.map(|s| s.label()).unwrap_or("none"),
        )],
    )?;
    out.write_text("rate.jsonl", &format!("{}\n", rate_json(&result, &note)))?;

    println!("{note}");
    println!(
        "thresholds = ({}, {}); survival = ({:.4}, {:.4})",
        cfg.thresholds.eta_th_a, cfg.thresholds.eta_th_b, survival_a, survival_b
    );
    println!(
        "secure key rate = {:e} bits/pulse ({:.3e} bits total){}",
        result.rate,
        result.secret_bits,
        result
            .shortfall
            .map(|s| format!(" [{}]", s.label()))
            .unwrap_or_default()
    );
    if cfg.expect_positive && result.rate <= 0.0 {
        return Err(CliError::Model(
            "configuration asserted a positive rate but the model certifies zero".into(),
        ));
    }
    Ok(())
}

/// Threaded population evaluator honouring the `raw_fitness` contract.
fn parallel_eval(
    evaluator: &FitnessEvaluator,
    threads: usize,
) -> impl Fn(&OptimizationProblem, &[Genome]) -> Vec<f64> + '_ {
    move |problem, genomes| {
        if threads <= 1 || genomes.len() < 2 * threads {
            return genomes.iter().map(|g| evaluator.raw(problem, g)).collect();
        }
        let chunk = genomes.len().div_ceil(threads);
        let mut scores = vec![0.0; genomes.len()];
        std::thread::scope(|scope| {
            let mut pending = Vec::new();
            for (slice, out) in genomes.chunks(chunk).zip(scores.chunks_mut(chunk)) {
                pending.push(scope.spawn(move || {
                    for (g, o) in slice.iter().zip(out.iter_mut()) {
                        *o = evaluator.raw(problem, g);
                    }
                }));
            }
            for handle in pending {
                handle.join().expect("fitness worker panicked");
            }
        });
        scores
    }
}

fn problem_from_config(cfg: &ExperimentConfig) -> OptimizationProblem {
    let mut problem = OptimizationProblem::new(cfg.channel_a.eta0, cfg.channel_b.eta0, cfg.device);
    problem.omega = cfg.analysis.omega;
    problem.fitness_mode = cfg.ga_mode;
    problem.bounds = cfg.bounds();
    // the objective always runs the subtraction estimator unless the config
    // forces a validated form; auto-resolution needs concrete intensities,
    // which is what the optimizer is searching for
    if let Some(forced) = cfg.forced_settings() {
        problem.bound_settings = forced;
    }
    problem
}

pub fn cmd_optimize(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: usize,
) -> Result<(), CliError> {
    let problem = problem_from_config(cfg);
    let evaluator = FitnessEvaluator::new(&problem).map_err(model_err)?;
    let eval = parallel_eval(&evaluator, threads);
    let outcome = optimize_with(&problem, &cfg.ga, &eval).map_err(model_err)?;

    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;
    let rows: Vec<String> = outcome
        .trace
        .iter()
        .map(|g| format!("{},{:e},{:e}", g.generation, g.best_rate, g.mean_rate))
        .collect();
    out.write_csv("convergence.csv", "generation,best_rate,mean_rate", &rows)?;

    let fragment = {
        let p = |name: &str, pp: &ProtocolParams| {
            format!(
                "[{name}]\ns = {}\nmu = {}\nnu = {}\np_s = {}\np_mu = {}\np_nu = {}\n",
                pp.signal, pp.mu, pp.nu, pp.p_signal, pp.p_mu, pp.p_nu
            )
        };
        format!(
            "# optimized parameters (best rate {:e} bits/pulse, seed {})\n{}\n{}",
            outcome.best_rate,
            cfg.ga.seed,
            p("alice", &outcome.best_alice),
            p("bob", &outcome.best_bob)
        )
    };
    out.write_text("params.cfg", &fragment)?;
    println!(
        "optimized rate = {:e} bits/pulse over {} generations (bound form: {})",
        outcome.best_rate,
        cfg.ga.generations,
        problem.bound_settings.form.label()
    );
    println!("parameters written to params.cfg");
    Ok(())
}

fn surface_rows(surface: &RateSurface) -> Vec<String> {
    surface
        .points
        .iter()
        .map(|p| {
            let (log_rate, flagged) = log10_or_sentinel(p.rate);
            format!(
                "{:e},{:e},{},{}",
                p.thresholds.eta_th_a, p.thresholds.eta_th_b, log_rate, flagged
            )
        })
        .collect()
}

/// Reads externally measured per-bin counts records: CSV rows of
/// `eta_a, eta_b, n_effective, n_zz, m_zz`, then the nine X-basis
/// `n, m` pairs in (mu, nu, omega) x (mu, nu, omega) order — 23 columns.
fn read_binned_counts(path: &Path) -> Result<Vec<mdiqkd_core::BinnedCountsEntry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (idx == 0 && line.starts_with("eta_a")) {
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                CliError::Config(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    idx + 1
                ))
            })?;
        if cols.len() != 23 {
            return Err(CliError::Config(format!(
                "{}: line {} has {} columns, expected 23",
                path.display(),
                idx + 1,
                cols.len()
            )));
        }
        let mut counts = CountsRecord::zero();
        counts.n_effective = cols[2];
        counts.n_zz = cols[3];
        counts.m_zz = cols[4];
        for i in 0..3 {
            for j in 0..3 {
                counts.n_x[i][j] = cols[5 + 2 * (3 * i + j)];
                counts.m_x[i][j] = cols[6 + 2 * (3 * i + j)];
            }
        }
        if !counts.check_invariants() {
            return Err(CliError::Config(format!(
                "{}: line {} violates 0 <= m <= n",
                path.display(),
                idx + 1
            )));
        }
        entries.push(mdiqkd_core::BinnedCountsEntry {
            eta_a: cols[0],
            eta_b: cols[1],
            counts,
        });
    }
    Ok(entries)
}

pub fn cmd_arts(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let (alice, bob) = cfg
        .require_parties()
        .map_err(|e| CliError::Config(e.message))?;
    let (settings, note) = resolve_settings(cfg, &alice, &bob)?;
    let surface = if let Some(path) = &cfg.binned_counts {
        // post-hoc scan over measured per-bin records instead of the model
        let entries = read_binned_counts(Path::new(path))?;
        mdiqkd_core::arts_scan_binned(
            &entries,
            &alice,
            &bob,
            &cfg.device,
            &GridSpec::default(),
            settings,
        )
        .map_err(model_err)?
    } else {
        let (da, db) = discretized(cfg)?;
        arts_scan(
            &alice,
            &bob,
            &da,
            &db,
            &cfg.device,
            &GridSpec::default(),
            settings,
        )
        .map_err(model_err)?
    };

    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;
    out.write_csv(
        "surface.csv",
        "eta_th_a,eta_th_b,log10_rate,zero_rate",
        &surface_rows(&surface),
    )?;
    let summary = format!(
        "{note}\nargmax: eta_th_a = {}, eta_th_b = {}\nmax rate = {:e} bits/pulse\n",
        surface.argmax.eta_th_a, surface.argmax.eta_th_b, surface.max_rate
    );
    out.write_text("summary.txt", &summary)?;
    print!("{summary}");
    if cfg.expect_positive && surface.max_rate <= 0.0 {
        return Err(CliError::Model(
            "configuration asserted a positive rate but the whole surface is zero".into(),
        ));
    }
    Ok(())
}

pub fn cmd_prts(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let (alice, bob) = cfg
        .require_parties()
        .map_err(|e| CliError::Config(e.message))?;
    let (settings, note) = resolve_settings(cfg, &alice, &bob)?;
    let prts = match prts_threshold(
        &alice,
        &bob,
        &cfg.channel_a,
        &cfg.channel_b,
        &cfg.device,
        cfg.analysis.n_bins,
        settings,
    ) {
        Ok(p) => p,
        Err(PostselectionError::BeyondKeyGenerationRange) => {
            return Err(CliError::Model(
                "channel beyond key-generation range".into(),
            ))
        }
        Err(e) => return Err(model_err(e)),
    };

    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;
    out.write_csv(
        "surface.csv",
        "eta_th_a,eta_th_b,log10_rate,zero_rate",
        &surface_rows(&prts.surface),
    )?;
    let summary = format!(
        "{note}\nprefixed threshold: eta_th_a = {}, eta_th_b = {}\n\
         predicted rate = {:e} bits/pulse\ncoarse argmax: ({}, {}) at {:e}\n",
        prts.threshold.eta_th_a,
        prts.threshold.eta_th_b,
        prts.predicted_rate,
        prts.coarse.eta_th_a,
        prts.coarse.eta_th_b,
        prts.coarse_rate
    );
    out.write_text("prts.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .ok_or_else(|| CliError::Config("missing required section `[sweep]`".into()))?;
    if sweep.points < 2 {
        return Err(CliError::Config("`sweep.points` must be >= 2".into()));
    }

    let mut specs = Vec::with_capacity(sweep.points);
    for k in 0..sweep.points {
        let total = sweep.total_start_db
            + (sweep.total_end_db - sweep.total_start_db) * k as f64 / (sweep.points - 1) as f64;
        let (loss_a, loss_b) = match sweep.split {
            SweepSplit::Symmetric => (total / 2.0, total / 2.0),
            SweepSplit::FixedAlice => {
                let b = total - sweep.alice_loss_db;
                if b <= 0.0 {
                    return Err(CliError::Config(format!(
                        "`sweep`: total loss {total} dB leaves no budget for Bob at \
                         alice_loss_db = {}",
                        sweep.alice_loss_db
                    )));
                }
                (sweep.alice_loss_db, b)
            }
        };
        let spec_a = ChannelSpec::from_loss_db(loss_a, cfg.channel_a.sigma2).map_err(model_err)?;
        let spec_b = ChannelSpec::from_loss_db(loss_b, cfg.channel_b.sigma2).map_err(model_err)?;
        specs.push((spec_a, spec_b));
    }

    // fixed intensities come from the config; otherwise each point gets a
    // fresh GA run seeded deterministically from the sweep index
    let mut points = Vec::with_capacity(specs.len());
    let mut reference_party = None;
    for (k, (spec_a, spec_b)) in specs.iter().enumerate() {
        let (alice, bob) = if sweep.optimize {
            let mut problem = problem_from_config(cfg);
            problem.eta0_a = spec_a.eta0;
            problem.eta0_b = spec_b.eta0;
            let ga = GaConfig {
                seed: cfg.ga.seed.wrapping_add(k as u64),
                ..cfg.ga
            };
            let evaluator = FitnessEvaluator::new(&problem).map_err(model_err)?;
            let eval = parallel_eval(&evaluator, threads);
            let outcome = optimize_with(&problem, &ga, &eval).map_err(model_err)?;
            (outcome.best_alice, outcome.best_bob)
        } else {
            cfg.require_parties()
                .map_err(|e| CliError::Config(e.message))?
        };
        reference_party.get_or_insert((alice, bob));
        points.push(SweepPointSpec {
            spec_a: *spec_a,
            spec_b: *spec_b,
            alice,
            bob,
        });
    }

    let (alice_ref, bob_ref) = reference_party.expect("at least two sweep points");
    let (settings, note) = resolve_settings(cfg, &alice_ref, &bob_ref)?;
    let curve =
        loss_sweep(&points, &cfg.device, cfg.analysis.n_bins, settings).map_err(model_err)?;

    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;
    let rows: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{},{:e},{:e}", p.total_loss_db, p.rate_static, p.rate_prts))
        .collect();
    out.write_csv("sweep.csv", "loss_db,rate_static,rate_prts", &rows)?;

    let fmt_loss = |v: Option<f64>| match v {
        Some(db) => format!("{db:.2} dB"),
        None => "none".to_string(),
    };
    let extension = match (curve.max_tolerable_static_db, curve.max_tolerable_prts_db) {
        (Some(s), Some(p)) => format!("{:.2} dB", p - s),
        _ => "undefined".to_string(),
    };
    let summary = format!(
        "{note}\nmax tolerable loss (static) = {}\nmax tolerable loss (P-RTS) = {}\n\
         P-RTS loss extension = {extension}\n",
        fmt_loss(curve.max_tolerable_static_db),
        fmt_loss(curve.max_tolerable_prts_db)
    );
    out.write_text("summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

struct SeriesPoint {
    label: String,
    truth: Option<f64>,
    estimate: Option<mdiqkd_core::TransmittanceEstimate>,
}

pub fn cmd_probe(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<(), CliError> {
    let probe = cfg
        .probe
        .as_ref()
        .ok_or_else(|| CliError::Config("missing required section `[probe]`".into()))?;
    let started = Instant::now();
    let out = OutputDir::create(out_dir, &cfg.resolved_text)?;

    let (calibration, series, corrupt) = match probe.mode {
        ProbeMode::Synthetic => synthetic_probe_run(probe, threads)?,
        ProbeMode::Files => file_probe_run(probe, threads)?,
    };

    let coeff_text = calibration
        .coefficients
        .iter()
        .enumerate()
        .map(|(k, c)| format!("c{k} = {c:e}"))
        .collect::<Vec<_>>()
        .join("\n");
    out.write_text(
        "calibration.txt",
        &format!(
            "# mdiqkd {} calibration curve: transmittance = poly(area)\ndegree = {}\n{}\n\
             residual_rms = {:e}\nvalid_range = {:e} {:e}\n",
            crate::output::VERSION,
            calibration.degree,
            coeff_text,
            calibration.residual_rms,
            calibration.valid_range.0,
            calibration.valid_range.1
        ),
    )?;

    let rows: Vec<String> = series
        .iter()
        .map(|p| match &p.estimate {
            Some(est) => format!(
                "{},{},{:e},{:e},{}",
                p.label,
                p.truth.map(|t| format!("{t:e}")).unwrap_or_default(),
                est.area,
                est.eta,
                u8::from(est.clamped)
            ),
            None => format!("{},,,,skipped", p.label),
        })
        .collect();
    out.write_csv("series.csv", "frame,true_eta,area,eta,clamped", &rows)?;

    let mut errors: Vec<f64> = series
        .iter()
        .filter_map(|p| match (&p.estimate, p.truth) {
            (Some(est), Some(truth)) if truth > 0.0 => Some((est.eta - truth).abs() / truth),
            _ => None,
        })
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let estimated = series.iter().filter(|p| p.estimate.is_some()).count();
    println!(
        "calibration degree {} (residual rms {:.3e}); {} frames estimated, {} corrupt/skipped",
        calibration.degree, calibration.residual_rms, estimated, corrupt
    );
    if !errors.is_empty() {
        println!(
            "closed-loop median |error| = {:.3}% over {} frames",
            100.0 * errors[errors.len() / 2],
            errors.len()
        );
    }
    println!(
        "probe run finished in {:.2} s",
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn estimate_batch(
    frames: &[(String, Option<f64>, ProbeFrame)],
    cal: &mdiqkd_core::CalibrationCurve,
    method: AreaMethod,
    threads: usize,
) -> Vec<SeriesPoint> {
    let estimate_one = |(label, truth, frame): &(String, Option<f64>, ProbeFrame)| SeriesPoint {
        label: label.clone(),
        truth: *truth,
        estimate: mdiqkd_core::estimate_transmittance(frame, cal, method).ok(),
    };
    if threads <= 1 || frames.len() < 2 * threads {
        return frames.iter().map(estimate_one).collect();
    }
    let chunk = frames.len().div_ceil(threads);
    let mut results: Vec<Option<SeriesPoint>> = Vec::new();
    results.resize_with(frames.len(), || None);
    std::thread::scope(|scope| {
        for (slice, out) in frames.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (f, o) in slice.iter().zip(out.iter_mut()) {
                    *o = Some(estimate_one(f));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|p| p.expect("worker filled slot"))
        .collect()
}

fn synthetic_probe_run(
    probe: &ProbeConfig,
    threads: usize,
) -> Result<(mdiqkd_core::CalibrationCurve, Vec<SeriesPoint>, usize), CliError> {
    if probe.levels < probe.degree + 2 {
        return Err(CliError::Config(format!(
            "`probe.levels` = {} cannot support a degree-{} calibration",
            probe.levels, probe.degree
        )));
    }
    let frame_spec = |eta: f64, noise: f64| SyntheticFrameSpec {
        amplitude: eta,
        center: probe.t0_center(),
        fwhm: probe.fwhm,
        offset: 0.0,
        noise_rms: noise,
        n_samples: probe.samples,
        dt: probe.dt,
        t0: 0.0,
    };
    let rng = SplitMix64::new(probe.seed);

    // calibration: average the per-level areas over noisy frames
    let mut pairs = Vec::with_capacity(probe.levels);
    for level in 1..=probe.levels {
        let eta = level as f64 / probe.levels as f64;
        let mut area_sum = 0.0;
        for rep in 0..probe.frames_per_level {
            let seed = rng.fork((level * 10_000 + rep) as u64).next_u64();
            let frame = synthetic_frame(&frame_spec(eta, eta / probe.snr), seed);
            area_sum += match probe.method {
                AreaMethod::Sum => mdiqkd_core::frame_sum(&frame),
                AreaMethod::Gaussian => {
                    mdiqkd_core::gaussian_fit(&frame)
                        .map_err(|e| CliError::Model(format!("calibration fit failed: {e}")))?
                        .area
                }
            };
        }
        pairs.push((area_sum / probe.frames_per_level as f64, eta));
    }
    let calibration = fit_calibration(&pairs, probe.degree).map_err(model_err)?;

    // series: random programmed levels, one noisy frame each
    let mut level_rng = SplitMix64::new(probe.seed ^ 0x5EED_5EED);
    let frames: Vec<(String, Option<f64>, ProbeFrame)> = (0..probe.series_frames)
        .map(|k| {
            let truth = 0.1 + 0.9 * level_rng.next_f64();
            let seed = rng.fork(1_000_000 + k as u64).next_u64();
            let frame = synthetic_frame(&frame_spec(truth, truth / probe.snr), seed);
            (format!("synthetic_{k:04}"), Some(truth), frame)
        })
        .collect();
    let series = estimate_batch(&frames, &calibration, probe.method, threads);
    Ok((calibration, series, 0))
}

impl ProbeConfig {
    fn t0_center(&self) -> f64 {
        0.5 * self.samples as f64 * self.dt
    }
}

fn file_probe_run(
    probe: &ProbeConfig,
    threads: usize,
) -> Result<(mdiqkd_core::CalibrationCurve, Vec<SeriesPoint>, usize), CliError> {
    let manifest_path = probe
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("missing required field `probe.manifest`".into()))?;
    let frames_dir = probe
        .frames_dir
        .as_ref()
        .ok_or_else(|| CliError::Config("missing required field `probe.frames_dir`".into()))?;

    // manifest rows: frame_path,programmed_transmittance
    let manifest = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Io(format!("cannot read {manifest_path}: {e}")))?;
    let mut pairs = Vec::new();
    for (idx, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (idx == 0 && line.contains("path")) {
            continue;
        }
        let (path, eta) = line.split_once(',').ok_or_else(|| {
            CliError::Config(format!(
                "{manifest_path}: line {} is not `path,eta`",
                idx + 1
            ))
        })?;
        let eta: f64 = eta.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "{manifest_path}: bad transmittance on line {}",
                idx + 1
            ))
        })?;
        let frame = frames::read_frame(Path::new(path.trim()), probe.format)
            .map_err(|e| CliError::Io(format!("calibration frame {path}: {e}")))?;
        let area = match probe.method {
            AreaMethod::Sum => mdiqkd_core::frame_sum(&frame),
            AreaMethod::Gaussian => {
                mdiqkd_core::gaussian_fit(&frame)
                    .map_err(|e| CliError::Model(format!("calibration frame {path}: {e}")))?
                    .area
            }
        };
        pairs.push((area, eta));
    }
    let calibration = fit_calibration(&pairs, probe.degree).map_err(model_err)?;

    let mut entries: Vec<_> = std::fs::read_dir(frames_dir)
        .map_err(|e| CliError::Io(format!("cannot read {frames_dir}: {e}")))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::Model(format!(
            "empty input directory: {frames_dir}"
        )));
    }

    let mut corrupt = 0usize;
    let mut frames_vec = Vec::new();
    let mut skipped = Vec::new();
    for path in &entries {
        let label = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        match frames::read_frame(path, probe.format) {
            Ok(frame) => frames_vec.push((label, None, frame)),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                corrupt += 1;
                skipped.push(SeriesPoint {
                    label,
                    truth: None,
                    estimate: None,
                });
            }
        }
    }
    let mut series = estimate_batch(&frames_vec, &calibration, probe.method, threads);
    series.extend(skipped);
    Ok((calibration, series, corrupt))
}
