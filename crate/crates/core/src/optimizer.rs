//! Genetic-algorithm search over the 12 protocol parameters:
//! {s, μ, ν, p_s, p_μ, p_ν} for each party, with the weakest decoy ω held
//! fixed (default vacuum).
//!
//! The GA is deliberately plain: tournament selection, blend crossover,
//! Gaussian mutation, elitism, and a repair step ([`constrain`]) that
//! projects raw candidates back onto the feasible set (intensity ordering
//! with a minimum gap, probability simplex capped at 0.999). Intensities
//! are initialised log-uniformly across their bounds: the useful signal and
//! decoy levels for strongly asymmetric channels sit orders of magnitude
//! apart, and a linear-uniform start rarely lands near them.
//!
//! Selection ranks candidates by the *raw* (unclamped) rate expression, so
//! the population keeps a gradient to climb inside the region where the
//! certified rate is still zero; reported fitness values are the clamped
//! rates. Every candidate draws from an RNG stream forked off the master
//! seed, so evaluating a population in parallel cannot change any result.

use alloc::vec::Vec;

use crate::channel::{discretize, ChannelSpec, TransmittanceDistribution};
use crate::detection::{counts_table, pooled_counts, DeviceParams, ProtocolParams};
use crate::finite_key::{key_rate_with, BoundSettings, PrefactorConvention, YieldBoundForm};
use crate::rng::SplitMix64;

/// Fitness value assigned to candidates outside the feasible set.
pub const INFEASIBLE: f64 = f64::NEG_INFINITY;

/// Minimum gap enforced between adjacent intensity levels.
const INTENSITY_GAP: f64 = 1e-4;
/// Probability simplex cap: p_s + p_mu + p_nu <= this, keeping p_omega > 0.
const SIMPLEX_CAP: f64 = 0.999;

/// Per-parameter search ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    pub intensity: (f64, f64),
    pub probability: (f64, f64),
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            intensity: (1e-4, 1.0),
            probability: (1e-3, 0.997),
        }
    }
}

/// What the objective evaluates the candidate against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitnessMode {
    /// Counts taken at the mean transmittances (η₀A, η₀B).
    StaticMean,
    /// Counts pooled over the discretised fading distributions.
    TurbulenceAveraged {
        sigma2_a: f64,
        sigma2_b: f64,
        n_bins: usize,
    },
}

/// Optional structural constraint on the signal intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalConstraint {
    Free,
    /// Pins s_B = s_A·η₀A/η₀B, the photon-flux-matched heuristic; used as
    /// a comparison baseline for the free optimisation.
    FluxBalancedZ,
}

/// The optimisation target: channels, devices, and objective policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationProblem {
    pub eta0_a: f64,
    pub eta0_b: f64,
    pub dev: DeviceParams,
    /// Fixed weakest-decoy intensity shared by both parties.
    pub omega: f64,
    pub fitness_mode: FitnessMode,
    pub bounds: SearchBounds,
    pub constraint: SignalConstraint,
    /// Estimator settings used inside the objective; resolve once via
    /// `resolve_bound_settings` when building the problem.
    pub bound_settings: BoundSettings,
}

impl OptimizationProblem {
    /// A problem with default bounds, static-mean fitness, free signals,
    /// and the subtraction estimator.
    pub fn new(eta0_a: f64, eta0_b: f64, dev: DeviceParams) -> Self {
        Self {
            eta0_a,
            eta0_b,
            dev,
            omega: 0.0,
            fitness_mode: FitnessMode::StaticMean,
            bounds: SearchBounds::default(),
            constraint: SignalConstraint::Free,
            bound_settings: BoundSettings {
                form: YieldBoundForm::Subtraction,
                convention: PrefactorConvention::AliceIntensities,
            },
        }
    }
}

/// GA hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Gaussian mutation width as a fraction of each parameter's range.
    pub mutation_scale: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 80,
            generations: 300,
            crossover_rate: 0.9,
            mutation_rate: 0.15,
            mutation_scale: 0.1,
            tournament_size: 3,
            elitism: 2,
            seed: 1,
        }
    }
}

/// Flat parameter vector: [s, μ, ν, p_s, p_μ, p_ν] for Alice then Bob.
pub type Genome = [f64; 12];

/// Best-of-generation statistics for convergence traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_rate: f64,
    pub mean_rate: f64,
}

/// Result of an optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub best_alice: ProtocolParams,
    pub best_bob: ProtocolParams,
    pub best_genome: Genome,
    pub best_rate: f64,
    pub trace: Vec<GenerationStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerError {
    /// population < 4, elitism >= population, rates outside [0, 1], or
    /// tournament_size = 0.
    InvalidGaConfig,
    /// Channel or bound setup invalid.
    InvalidProblem,
    /// No feasible candidate found after 100 resampling rounds.
    AllInfeasible,
}

impl core::fmt::Display for OptimizerError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidGaConfig => write!(f, "invalid GA configuration"),
            Self::InvalidProblem => write!(f, "invalid optimisation problem"),
            Self::AllInfeasible => {
                write!(f, "no feasible candidate after 100 resampling rounds")
            }
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let rates_ok = (0.0..=1.0).contains(&self.crossover_rate)
            && (0.0..=1.0).contains(&self.mutation_rate)
            && self.mutation_scale >= 0.0;
        if self.population >= 4
            && self.elitism < self.population
            && self.tournament_size >= 1
            && rates_ok
        {
            Ok(())
        } else {
            Err(OptimizerError::InvalidGaConfig)
        }
    }
}

/// Splits a genome into per-party protocol parameters under a problem's ω.
pub fn genome_to_params(genome: &Genome, omega: f64) -> (ProtocolParams, ProtocolParams) {
    let party = |g: &[f64]| ProtocolParams {
        signal: g[0],
        mu: g[1],
        nu: g[2],
        omega,
        p_signal: g[3],
        p_mu: g[4],
        p_nu: g[5],
    };
    (party(&genome[..6]), party(&genome[6..]))
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Projects a raw genome onto the feasible set: clamps to bounds, repairs
/// the intensity ordering μ > ν > ω with a 1e-4 minimum gap (by sorting),
/// rescales probability triples whose sum exceeds 0.999, and applies the
/// signal constraint. Idempotent.
pub fn constrain(genome: &Genome, problem: &OptimizationProblem) -> Genome {
    let (ilo, ihi) = problem.bounds.intensity;
    let (plo, phi) = problem.bounds.probability;
    let mut out = *genome;
    for off in [0usize, 6] {
        for k in 0..3 {
            out[off + k] = clamp(out[off + k], ilo, ihi);
        }
        // ordering repair: mu takes the larger of the two decoy genes
        let (hi, lo) = if out[off + 1] >= out[off + 2] {
            (out[off + 1], out[off + 2])
        } else {
            (out[off + 2], out[off + 1])
        };
        let nu = clamp(
            lo.max(problem.omega + INTENSITY_GAP),
            ilo,
            ihi - INTENSITY_GAP,
        );
        let mu = clamp(hi.max(nu + INTENSITY_GAP), ilo, ihi);
        out[off + 1] = mu;
        out[off + 2] = nu;

        for k in 3..6 {
            out[off + k] = clamp(out[off + k], plo, phi);
        }
        // scale the triple down onto the simplex cap; entries pinned at the
        // probability floor stay put, the rest share the remaining budget
        for _ in 0..4 {
            let sum = out[off + 3] + out[off + 4] + out[off + 5];
            if sum <= SIMPLEX_CAP * (1.0 + 1e-12) {
                break;
            }
            let mut floor_sum = 0.0;
            let mut free_sum = 0.0;
            for k in 3..6 {
                if out[off + k] <= plo {
                    floor_sum += out[off + k];
                } else {
                    free_sum += out[off + k];
                }
            }
            if free_sum <= 0.0 || SIMPLEX_CAP <= floor_sum {
                break; // bounds leave no room; candidate stays infeasible
            }
            let scale = (SIMPLEX_CAP - floor_sum) / free_sum;
            for k in 3..6 {
                if out[off + k] > plo {
                    out[off + k] = clamp(out[off + k] * scale, plo, phi);
                }
            }
        }
    }
    if problem.constraint == SignalConstraint::FluxBalancedZ {
        out[6] = clamp(out[0] * problem.eta0_a / problem.eta0_b, ilo, ihi);
    }
    out
}

fn within_bounds(genome: &Genome, problem: &OptimizationProblem) -> bool {
    let (ilo, ihi) = problem.bounds.intensity;
    let (plo, phi) = problem.bounds.probability;
    for off in [0usize, 6] {
        for k in 0..3 {
            if !(ilo..=ihi).contains(&genome[off + k]) {
                return false;
            }
        }
        for k in 3..6 {
            if !(plo..=phi).contains(&genome[off + k]) {
                return false;
            }
        }
        if genome[off + 3] + genome[off + 4] + genome[off + 5] > SIMPLEX_CAP * (1.0 + 1e-12) {
            return false;
        }
    }
    true
}

/// Reusable objective evaluator; builds the discretised fading
/// distributions once so threaded callers do not pay per candidate.
pub struct FitnessEvaluator {
    dist_a: Option<TransmittanceDistribution>,
    dist_b: Option<TransmittanceDistribution>,
}

impl FitnessEvaluator {
    pub fn new(problem: &OptimizationProblem) -> Result<Self, OptimizerError> {
        match problem.fitness_mode {
            FitnessMode::StaticMean => Ok(Self {
                dist_a: None,
                dist_b: None,
            }),
            FitnessMode::TurbulenceAveraged {
                sigma2_a,
                sigma2_b,
                n_bins,
            } => {
                let spec_a = ChannelSpec::new(problem.eta0_a, sigma2_a)
                    .map_err(|_| OptimizerError::InvalidProblem)?;
                let spec_b = ChannelSpec::new(problem.eta0_b, sigma2_b)
                    .map_err(|_| OptimizerError::InvalidProblem)?;
                Ok(Self {
                    dist_a: Some(
                        discretize(&spec_a, n_bins).map_err(|_| OptimizerError::InvalidProblem)?,
                    ),
                    dist_b: Some(
                        discretize(&spec_b, n_bins).map_err(|_| OptimizerError::InvalidProblem)?,
                    ),
                })
            }
        }
    }

    /// Raw (unclamped) objective; `INFEASIBLE` outside the feasible set.
    pub fn raw(&self, problem: &OptimizationProblem, genome: &Genome) -> f64 {
        if !within_bounds(genome, problem) {
            return INFEASIBLE;
        }
        let (alice, bob) = genome_to_params(genome, problem.omega);
        if alice.validate().is_err() || bob.validate().is_err() {
            return INFEASIBLE;
        }
        let counts = match (&self.dist_a, &self.dist_b) {
            (Some(da), Some(db)) => pooled_counts(&alice, &bob, da, db, &problem.dev),
            _ => counts_table(
                &alice,
                &bob,
                problem.eta0_a,
                problem.eta0_b,
                &problem.dev,
                problem.dev.n_pulses,
            ),
        };
        let counts = match counts {
            Ok(c) => c,
            Err(_) => return INFEASIBLE,
        };
        match key_rate_with(problem.bound_settings, &counts, &alice, &bob, &problem.dev) {
            Ok(r) => {
                if r.rate > 0.0 {
                    r.rate
                } else {
                    r.raw_rate
                }
            }
            Err(_) => INFEASIBLE,
        }
    }
}

/// The selection objective for one candidate: the certified rate when
/// positive, otherwise the raw rate expression (negative), and
/// [`INFEASIBLE`] outside the feasible set. Parallel population evaluators
/// must reproduce this function exactly.
pub fn raw_fitness(problem: &OptimizationProblem, genome: &Genome) -> f64 {
    match FitnessEvaluator::new(problem) {
        Ok(eval) => eval.raw(problem, genome),
        Err(_) => INFEASIBLE,
    }
}

/// The certified key rate of a candidate (≥ 0), or [`INFEASIBLE`] for
/// candidates outside the feasible set.
pub fn fitness(problem: &OptimizationProblem, genome: &Genome) -> f64 {
    let raw = raw_fitness(problem, genome);
    if raw == INFEASIBLE {
        INFEASIBLE
    } else {
        raw.max(0.0)
    }
}

fn sample_genome(problem: &OptimizationProblem, rng: &mut SplitMix64) -> Genome {
    let (ilo, ihi) = problem.bounds.intensity;
    let (plo, phi) = problem.bounds.probability;
    let mut g = [0.0; 12];
    for off in [0usize, 6] {
        for k in 0..3 {
            g[off + k] = rng.next_log_range(ilo, ihi);
        }
        for k in 3..6 {
            g[off + k] = rng.next_range(plo, phi);
        }
    }
    constrain(&g, problem)
}

/// Runs the GA with the built-in sequential population evaluator.
pub fn optimize(
    problem: &OptimizationProblem,
    ga: &GaConfig,
) -> Result<OptimizeOutcome, OptimizerError> {
    let evaluator = FitnessEvaluator::new(problem)?;
    let eval = |p: &OptimizationProblem, genomes: &[Genome]| -> Vec<f64> {
        genomes.iter().map(|g| evaluator.raw(p, g)).collect()
    };
    optimize_with(problem, ga, &eval)
}

/// Runs the GA with a caller-supplied population evaluator (e.g. a thread
/// pool). The evaluator must return [`raw_fitness`] values in input order;
/// since candidates are pure functions of their genome, any scheduling
/// yields identical results.
pub fn optimize_with(
    problem: &OptimizationProblem,
    ga: &GaConfig,
    eval: &dyn Fn(&OptimizationProblem, &[Genome]) -> Vec<f64>,
) -> Result<OptimizeOutcome, OptimizerError> {
    ga.validate()?;
    problem
        .dev
        .validate()
        .map_err(|_| OptimizerError::InvalidProblem)?;
    if !(problem.eta0_a > 0.0 && problem.eta0_a <= 1.0)
        || !(problem.eta0_b > 0.0 && problem.eta0_b <= 1.0)
    {
        return Err(OptimizerError::InvalidProblem);
    }

    let mut master = SplitMix64::new(ga.seed);

    // initial population, resampling infeasible candidates
    let mut population: Vec<Genome> = Vec::with_capacity(ga.population);
    let mut round = 0;
    while population.len() < ga.population {
        let candidate = sample_genome(problem, &mut master);
        let feasible = {
            let (alice, bob) = genome_to_params(&candidate, problem.omega);
            within_bounds(&candidate, problem) && alice.validate().is_ok() && bob.validate().is_ok()
        };
        if feasible {
            population.push(candidate);
        } else {
            round += 1;
            if round >= 100 * ga.population {
                return Err(OptimizerError::AllInfeasible);
            }
        }
    }

    let mut scores = eval(problem, &population);
    let mut trace = Vec::with_capacity(ga.generations + 1);
    let mut best_genome = population[0];
    let mut best_score = INFEASIBLE;

    let record = |gen: usize,
                  scores: &[f64],
                  population: &[Genome],
                  best_genome: &mut Genome,
                  best_score: &mut f64,
                  trace: &mut Vec<GenerationStats>| {
        let mut gen_best = INFEASIBLE;
        let mut gen_best_idx = 0;
        let mut mean = 0.0;
        for (i, &s) in scores.iter().enumerate() {
            if s > gen_best {
                gen_best = s;
                gen_best_idx = i;
            }
            mean += if s == INFEASIBLE { 0.0 } else { s.max(0.0) };
        }
        if gen_best > *best_score {
            *best_score = gen_best;
            *best_genome = population[gen_best_idx];
        }
        trace.push(GenerationStats {
            generation: gen,
            best_rate: best_score.max(0.0),
            mean_rate: mean / scores.len() as f64,
        });
    };

    record(
        0,
        &scores,
        &population,
        &mut best_genome,
        &mut best_score,
        &mut trace,
    );

    let (ilo, ihi) = problem.bounds.intensity;
    let (plo, phi) = problem.bounds.probability;
    let range_of = |k: usize| if k % 6 < 3 { ihi - ilo } else { phi - plo };

    for gen in 1..=ga.generations {
        // elite carry-over: stable order of the current population by score
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut next: Vec<Genome> = order
            .iter()
            .take(ga.elitism)
            .map(|&i| population[i])
            .collect();

        let tournament = |rng: &mut SplitMix64| -> usize {
            let mut best = rng.next_usize(population.len());
            for _ in 1..ga.tournament_size {
                let challenger = rng.next_usize(population.len());
                if scores[challenger] > scores[best] {
                    best = challenger;
                }
            }
            best
        };

        while next.len() < ga.population {
            let a = population[tournament(&mut master)];
            let b = population[tournament(&mut master)];
            let mut child = a;
            if master.next_f64() < ga.crossover_rate {
                // blend crossover with 25% extrapolation outside the segment
                for k in 0..12 {
                    let u = master.next_range(-0.25, 1.25);
                    child[k] = a[k] + u * (b[k] - a[k]);
                }
            }
            for (k, gene) in child.iter_mut().enumerate() {
                if master.next_f64() < ga.mutation_rate {
                    *gene += master.next_gaussian() * ga.mutation_scale * range_of(k);
                }
            }
            next.push(constrain(&child, problem));
        }

        population = next;
        scores = eval(problem, &population);
        record(
            gen,
            &scores,
            &population,
            &mut best_genome,
            &mut best_score,
            &mut trace,
        );
    }

    let (best_alice, best_bob) = genome_to_params(&best_genome, problem.omega);
    Ok(OptimizeOutcome {
        best_alice,
        best_bob,
        best_genome,
        best_rate: best_score.max(0.0),
        trace,
    })
}
