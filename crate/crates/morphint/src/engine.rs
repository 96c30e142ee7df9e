//! Morphing protocol orchestration: trajectory execution, work accumulation,
//! the exponential-average estimate with block-average uncertainty, step-size
//! tuning, and displacement diagnostics.
//!
//! A trajectory starts from a uniform draw in the domain (the flat reference
//! makes that the exact initial distribution) and takes `n_steps` moves. Each
//! step first accumulates the work increment
//! `dt * rate(t) * (u1(x) - c)` at the pre-move point and pre-morph
//! parameter, then moves `x` with the propagator against the morphed
//! potential `lambda(t_s) * u1(x) + (1 - lambda(t_s)) * c`. Since the
//! reference level is constant, only `lambda * u1` differences matter for
//! acceptance, and one integrand evaluation per step suffices.

use rand::distributions::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ConfigError, DomainError, FlatReference, HyperRectangle, IntegralEstimate, MorphRun,
    TrajectoryRecord,
};
use crate::integrand::{Integrand, Signedness};
use crate::numeric::{mean, sample_std, CompensatedSum};
use crate::propagator::{self, PropagatorConfig, PropagatorError};
use crate::rng;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("trajectory {index} aborted: {reason}")]
    TrajectoryAborted { index: usize, reason: AbortReason },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error("integrand may change sign; route it through the sign-splitting integrator")]
    SignedIntegrand,
    #[error("the Langevin propagator needs an integrand gradient")]
    GradientUnavailable,
    #[error("step-size tuning needs a Metropolis propagator in the pilot run")]
    TuningRequiresIsMc,
    #[error("tuning failed: best acceptance {best_acceptance_pct:.2}% is below 5%")]
    TuningFailed { best_acceptance_pct: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum AbortReason {
    #[error("pseudo-potential not finite at the starting point")]
    NonFinitePotentialAtStart,
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
}

/// Morphing schedule `lambda(t)` on the unit progression interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphSchedule {
    /// Constant-rate schedule `lambda(t) = t`.
    Linear,
}

impl MorphSchedule {
    #[inline]
    pub fn lambda(self, t: f64) -> f64 {
        match self {
            Self::Linear => t,
        }
    }

    /// `d lambda / dt`.
    #[inline]
    pub fn rate(self, _t: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
        }
    }
}

/// The full set of trajectory records of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkEnsemble {
    records: Vec<TrajectoryRecord>,
    block_size: usize,
    sigma_w: f64,
}

impl WorkEnsemble {
    pub fn new(records: Vec<TrajectoryRecord>, block_size: usize) -> Self {
        assert!(block_size >= 1 && records.len() % block_size == 0);
        let works: Vec<f64> = records.iter().map(|r| r.work).collect();
        let sigma_w = sample_std(&works);
        Self { records, block_size, sigma_w }
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_blocks(&self) -> usize {
        self.records.len() / self.block_size
    }

    /// Standard deviation of the work values. Values at or below 1 indicate
    /// a well-sampled low-work wing; larger values call for a slower
    /// schedule or more trajectories.
    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    /// CSV export for external analysis of the work distribution.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "traj_index,block_index,work,accepted,attempted")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(
                out,
                "{},{},{:.16e},{},{}",
                i,
                i / self.block_size,
                r.work,
                r.moves_accepted,
                r.moves_attempted
            )?;
        }
        Ok(())
    }
}

/// Estimator options. The Student-t factor widens the block-average sigma at
/// the 68.27% coverage quantile when fewer than 30 blocks are available; it
/// is off by default.
#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateOptions {
    pub student_t_correction: bool,
}

/// Runs a single trajectory and returns its record.
pub fn run_trajectory(
    integrand: &dyn Integrand,
    reference: &FlatReference,
    schedule: MorphSchedule,
    propagator: &PropagatorConfig,
    domain: &HyperRectangle,
    n_steps: usize,
    traj_seed: u64,
) -> Result<TrajectoryRecord, AbortReason> {
    propagate(integrand, reference, schedule, propagator, domain, n_steps, traj_seed, |_, _| {})
}

/// Trajectory loop with a step observer (used by the displacement trace).
/// The observer sees the starting point as step 0.
fn propagate(
    integrand: &dyn Integrand,
    reference: &FlatReference,
    schedule: MorphSchedule,
    propagator: &PropagatorConfig,
    domain: &HyperRectangle,
    n_steps: usize,
    traj_seed: u64,
    mut observe: impl FnMut(u64, &[f64]),
) -> Result<TrajectoryRecord, AbortReason> {
    let dim = domain.dim();
    let mut stream = rng::stream(traj_seed);

    let mut x = vec![0.0f64; dim];
    for i in 0..dim {
        let u: f64 = stream.sample(Open01);
        x[i] = domain.lower()[i] + u * domain.width(i);
    }
    propagator::reflect(&mut x, domain)?;
    observe(0, &x);

    let c = reference.level();
    let dt = 1.0 / n_steps as f64;
    let mut work = CompensatedSum::new();
    let mut accepted = 0u64;

    match propagator {
        PropagatorConfig::IsMc { delta_max } => {
            let mut u1 = integrand.potential(&x);
            if !u1.is_finite() {
                return Err(AbortReason::NonFinitePotentialAtStart);
            }
            let mut proposal = vec![0.0f64; dim];
            let mut u1_proposed = 0.0f64;
            for s in 1..=n_steps {
                let t_prev = (s - 1) as f64 * dt;
                work.add(dt * schedule.rate(t_prev) * (u1 - c));
                let lambda = schedule.lambda(s as f64 * dt);
                let mut morphed = lambda * u1;
                let ok = propagator::metropolis_step(
                    &mut x,
                    &mut morphed,
                    &mut |p| {
                        u1_proposed = integrand.potential(p);
                        lambda * u1_proposed
                    },
                    delta_max,
                    domain,
                    &mut stream,
                    &mut proposal,
                )?;
                if ok {
                    u1 = u1_proposed;
                    accepted += 1;
                }
                observe(s as u64, &x);
            }
            Ok(TrajectoryRecord {
                work: work.total(),
                moves_attempted: n_steps as u64,
                moves_accepted: accepted,
                final_point: x,
            })
        }
        PropagatorConfig::Langevin { diffusion } => {
            let mut grad = vec![0.0f64; dim];
            for s in 1..=n_steps {
                let u1 = integrand.potential_and_grad(&x, &mut grad);
                if s == 1 && !u1.is_finite() {
                    return Err(AbortReason::NonFinitePotentialAtStart);
                }
                let t_prev = (s - 1) as f64 * dt;
                work.add(dt * schedule.rate(t_prev) * (u1 - c));
                let lambda = schedule.lambda(s as f64 * dt);
                for g in grad.iter_mut() {
                    *g *= lambda;
                }
                propagator::langevin_step(&mut x, &grad, *diffusion, dt, domain, &mut stream)?;
                observe(s as u64, &x);
            }
            Ok(TrajectoryRecord {
                work: work.total(),
                // Langevin takes every step.
                moves_attempted: n_steps as u64,
                moves_accepted: n_steps as u64,
                final_point: x,
            })
        }
    }
}

/// Forms the integral estimate from a work ensemble: the mean of `exp(-w)`
/// scales the reference integral, and the spread of per-block means gives the
/// standard deviation of the mean.
pub fn jarzynski_estimate(
    ensemble: &WorkEnsemble,
    reference: &FlatReference,
) -> Result<IntegralEstimate, ConfigError> {
    jarzynski_estimate_with(ensemble, reference, EstimateOptions::default())
}

pub fn jarzynski_estimate_with(
    ensemble: &WorkEnsemble,
    reference: &FlatReference,
    options: EstimateOptions,
) -> Result<IntegralEstimate, ConfigError> {
    let n_blocks = ensemble.n_blocks();
    if n_blocks < 2 {
        return Err(ConfigError::InsufficientBlocks(n_blocks));
    }
    let exp_works: Vec<f64> = ensemble.records().iter().map(|r| (-r.work).exp()).collect();
    let factor = mean(&exp_works);
    let block_factors: Vec<f64> =
        exp_works.chunks_exact(ensemble.block_size()).map(mean).collect();

    let e0 = reference.reference_integral();
    let value = e0 * factor;

    let mut spread = CompensatedSum::new();
    for &bf in &block_factors {
        let d = bf - factor;
        spread.add(d * d);
    }
    let m = n_blocks as f64;
    let mut sigma = e0 * (spread.total() / (m * (m - 1.0))).sqrt();
    if options.student_t_correction && n_blocks < 30 {
        sigma *= student_t_factor(n_blocks - 1);
    }

    let (accepted, attempted) = ensemble
        .records()
        .iter()
        .fold((0u64, 0u64), |(a, t), r| (a + r.moves_accepted, t + r.moves_attempted));
    let acceptance_pct = 100.0 * accepted as f64 / attempted as f64;

    Ok(IntegralEstimate {
        value,
        sigma,
        bias: IntegralEstimate::bias_estimate(value, sigma),
        acceptance_pct,
        block_factors,
        warnings: IntegralEstimate::standard_warnings(value, sigma, acceptance_pct),
    })
}

/// 68.27%-coverage Student-t quantile with `dof` degrees of freedom.
fn student_t_factor(dof: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let t = StudentsT::new(0.0, 1.0, dof as f64).expect("valid dof");
    t.inverse_cdf(0.841_344_746_068_543)
}

/// Executes a full run and returns the estimate together with the ensemble.
///
/// Trajectory seeds derive deterministically from
/// `(master_seed, block_index, index_in_block)`, so the result is bit-identical
/// regardless of the number of worker threads.
pub fn run_integration_full(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    run: &MorphRun,
) -> Result<(IntegralEstimate, WorkEnsemble), EngineError> {
    run.validate()?;
    run.propagator.validate_for(domain)?;
    if integrand.signedness() == Signedness::MaySignChange {
        return Err(EngineError::SignedIntegrand);
    }
    if matches!(run.propagator, PropagatorConfig::Langevin { .. }) && !integrand.has_gradient() {
        return Err(EngineError::GradientUnavailable);
    }
    let reference = run.reference(domain)?;
    let ensemble = run_ensemble(integrand, domain, run, &reference, MorphSchedule::Linear)?;
    let estimate = jarzynski_estimate(&ensemble, &reference)?;
    Ok((estimate, ensemble))
}

/// [`run_integration_full`] without the ensemble.
pub fn run_integration(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    run: &MorphRun,
) -> Result<IntegralEstimate, EngineError> {
    run_integration_full(integrand, domain, run).map(|(estimate, _)| estimate)
}

fn run_ensemble(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    run: &MorphRun,
    reference: &FlatReference,
    schedule: MorphSchedule,
) -> Result<WorkEnsemble, EngineError> {
    let block_size = run.block_size();
    let results: Vec<Result<TrajectoryRecord, AbortReason>> = (0..run.n_traj)
        .into_par_iter()
        .map(|i| {
            let seed = rng::trajectory_seed(
                run.master_seed,
                (i / block_size) as u64,
                (i % block_size) as u64,
            );
            run_trajectory(
                integrand,
                reference,
                schedule,
                &run.propagator,
                domain,
                run.n_steps,
                seed,
            )
        })
        .collect();
    let mut records = Vec::with_capacity(run.n_traj);
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(reason) => return Err(EngineError::TrajectoryAborted { index, reason }),
        }
    }
    Ok(WorkEnsemble::new(records, block_size))
}

/// One row of the tuning sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    /// Multiplier applied to the base step (domain width / 100 per
    /// dimension).
    pub multiplier: f64,
    pub acceptance_pct: f64,
}

/// Outcome of the step-length tuning sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    /// Chosen maximum move lengths, per dimension.
    pub delta_max: Vec<f64>,
    /// Base step the multipliers scale: width / 100 per dimension.
    pub base_delta: Vec<f64>,
    /// The full sweep, in grid order.
    pub table: Vec<TuningRow>,
    pub best_acceptance_pct: f64,
    /// Best acceptance still below 30%.
    pub low_acceptance: bool,
}

/// Grid of step multipliers swept by the tuner: `2^-6 .. 2^6`.
pub const TUNING_MULTIPLIERS: [i32; 13] = [-6, -5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5, 6];

/// Sweeps a geometric grid of scalar multipliers over the base step
/// `width/100` and returns the per-dimension maximum move lengths whose mean
/// pilot acceptance lands nearest 50% (ties prefer the larger step).
///
/// `pilot.n_traj` and `pilot.n_steps` set the per-grid-point budget; 100
/// trajectories of 1000 steps are plenty.
pub fn tune_delta_max(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    pilot: &MorphRun,
) -> Result<TuningReport, EngineError> {
    if !matches!(pilot.propagator, PropagatorConfig::IsMc { .. }) {
        return Err(EngineError::TuningRequiresIsMc);
    }
    if integrand.signedness() == Signedness::MaySignChange {
        return Err(EngineError::SignedIntegrand);
    }
    let reference = pilot.reference(domain)?;
    let base_delta: Vec<f64> = (0..domain.dim()).map(|i| domain.width(i) / 100.0).collect();
    let tuner_seed = rng::derive(pilot.master_seed, rng::branch::TUNER);

    let mut table = Vec::with_capacity(TUNING_MULTIPLIERS.len());
    let mut best: Option<(f64, f64)> = None; // (multiplier, acceptance)
    for (slot, &k) in TUNING_MULTIPLIERS.iter().enumerate() {
        let multiplier = 2f64.powi(k);
        let delta: Vec<f64> = base_delta.iter().map(|d| d * multiplier).collect();
        let propagator = PropagatorConfig::IsMc { delta_max: delta };
        let results: Vec<Result<(u64, u64), AbortReason>> = (0..pilot.n_traj)
            .into_par_iter()
            .map(|i| {
                let seed = rng::derive(rng::derive(tuner_seed, slot as u64), i as u64);
                run_trajectory(
                    integrand,
                    &reference,
                    MorphSchedule::Linear,
                    &propagator,
                    domain,
                    pilot.n_steps,
                    seed,
                )
                .map(|r| (r.moves_accepted, r.moves_attempted))
            })
            .collect();
        let mut accepted = 0u64;
        let mut attempted = 0u64;
        for (index, r) in results.into_iter().enumerate() {
            let (a, t) = r.map_err(|reason| EngineError::TrajectoryAborted { index, reason })?;
            accepted += a;
            attempted += t;
        }
        let acceptance_pct = 100.0 * accepted as f64 / attempted as f64;
        table.push(TuningRow { multiplier, acceptance_pct });
        let better = match best {
            None => true,
            // `<=` so that equal distances move to the larger step.
            Some((_, best_acc)) => {
                (acceptance_pct - 50.0).abs() <= (best_acc - 50.0).abs()
            }
        };
        if better {
            best = Some((multiplier, acceptance_pct));
        }
    }

    let (multiplier, best_acceptance_pct) = best.expect("non-empty grid");
    if table.iter().all(|row| row.acceptance_pct < 5.0) {
        return Err(EngineError::TuningFailed {
            best_acceptance_pct: table
                .iter()
                .map(|r| r.acceptance_pct)
                .fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(TuningReport {
        delta_max: base_delta.iter().map(|d| d * multiplier).collect(),
        base_delta,
        table,
        best_acceptance_pct,
        low_acceptance: best_acceptance_pct < 30.0,
    })
}

/// Euclidean displacement `||x(t) - x(0)||` of a single probe trajectory,
/// sampled every `n_steps/1000` steps.
pub fn displacement_trace(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    run: &MorphRun,
    probe_seed: u64,
) -> Result<Vec<(u64, f64)>, EngineError> {
    run.propagator.validate_for(domain)?;
    if integrand.signedness() == Signedness::MaySignChange {
        return Err(EngineError::SignedIntegrand);
    }
    if matches!(run.propagator, PropagatorConfig::Langevin { .. }) && !integrand.has_gradient() {
        return Err(EngineError::GradientUnavailable);
    }
    let reference = run.reference(domain)?;
    let stride = (run.n_steps / 1000).max(1) as u64;
    let mut origin: Vec<f64> = Vec::new();
    let mut trace: Vec<(u64, f64)> = Vec::new();
    propagate(
        integrand,
        &reference,
        MorphSchedule::Linear,
        &run.propagator,
        domain,
        run.n_steps,
        probe_seed,
        |step, x| {
            if step == 0 {
                origin = x.to_vec();
                trace.push((0, 0.0));
            } else if step % stride == 0 {
                let dl2: f64 = x.iter().zip(&origin).map(|(a, b)| (a - b) * (a - b)).sum();
                trace.push((step, dl2.sqrt()));
            }
        },
    )
    .map_err(|reason| EngineError::TrajectoryAborted { index: 0, reason })?;
    Ok(trace)
}
