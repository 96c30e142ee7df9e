//! Integration domain, run configuration, and result containers.
//!
//! Everything here is immutable after construction and safe to share across
//! threads without synchronization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagator::PropagatorConfig;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("lower and upper bounds have different lengths ({lower} vs {upper})")]
    DimensionMismatch { lower: usize, upper: usize },
    #[error("domain must have at least one dimension")]
    EmptyDomain,
    #[error("degenerate interval in dimension {dim}: lower {lower} >= upper {upper}")]
    DegenerateInterval { dim: usize, lower: f64, upper: f64 },
    #[error("domain volume is not a finite positive number; rescale the variables")]
    VolumeOverflow,
    #[error("trial integral guess must be positive, got {0}")]
    NonPositiveTrial(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("trajectory count must be positive")]
    ZeroTrajectories,
    #[error("step count must be positive")]
    ZeroSteps,
    #[error("block averaging needs at least 2 blocks, got {0}")]
    InsufficientBlocks(usize),
    #[error("block count {n_blocks} does not divide trajectory count {n_traj}")]
    BlockMismatch { n_traj: usize, n_blocks: usize },
    #[error("each block needs at least 2 trajectories, got {n_traj}/{n_blocks} = {per_block}")]
    InsufficientBlockTrajectories { n_traj: usize, n_blocks: usize, per_block: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Axis-aligned integration domain with per-dimension bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
    volume: f64,
}

impl HyperRectangle {
    /// Builds the domain and computes its volume as the product of widths.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DomainError> {
        if lower.len() != upper.len() {
            return Err(DomainError::DimensionMismatch { lower: lower.len(), upper: upper.len() });
        }
        if lower.is_empty() {
            return Err(DomainError::EmptyDomain);
        }
        let mut volume = 1.0f64;
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DomainError::DegenerateInterval { dim: i, lower: lo, upper: hi });
            }
            volume *= hi - lo;
        }
        // Every downstream estimate multiplies by the volume, so a product
        // that overflowed or underflowed would silently poison all of them.
        if !volume.is_finite() || volume <= 0.0 {
            return Err(DomainError::VolumeOverflow);
        }
        Ok(Self { lower, upper, volume })
    }

    /// Unit hypercube `[0,1]^dim`.
    pub fn unit_cube(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim]).expect("unit cube is valid")
    }

    /// Cube `[lo,hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self, DomainError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Repeats a list of per-dimension bounds `count` times.
    pub fn repeated(bounds: &[(f64, f64)], count: usize) -> Result<Self, DomainError> {
        let mut lower = Vec::with_capacity(bounds.len() * count);
        let mut upper = Vec::with_capacity(bounds.len() * count);
        for _ in 0..count {
            for &(lo, hi) in bounds {
                lower.push(lo);
                upper.push(hi);
            }
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((&xi, &lo), &hi)| xi >= lo && xi <= hi)
    }
}

/// Flat reference state: constant pseudo-potential `c` over the domain, with
/// known integral `e0 = volume * exp(-c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatReference {
    c: f64,
    e0: f64,
}

impl FlatReference {
    /// Chooses the level from a guess of the integral: `c = ln(volume / e_trial)`,
    /// so that `e0 = e_trial` by construction and the morphing factor is
    /// expected to land near one. The guess may be very rough.
    pub fn from_trial(domain: &HyperRectangle, e_trial: f64) -> Result<Self, DomainError> {
        if !(e_trial > 0.0) || !e_trial.is_finite() {
            return Err(DomainError::NonPositiveTrial(e_trial));
        }
        Ok(Self { c: (domain.volume() / e_trial).ln(), e0: e_trial })
    }

    /// Reference with `c = 0`, i.e. `e_trial = volume`. The default when the
    /// user has no guess at all.
    pub fn from_volume(domain: &HyperRectangle) -> Self {
        Self { c: 0.0, e0: domain.volume() }
    }

    /// Constant pseudo-potential level.
    pub fn level(&self) -> f64 {
        self.c
    }

    /// Reference integral `volume * exp(-c)`.
    pub fn reference_integral(&self) -> f64 {
        self.e0
    }
}

/// Full configuration of one integration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphRun {
    /// Total number of trajectories.
    pub n_traj: usize,
    /// Propagation steps per trajectory; the morphing step is `1/n_steps`.
    pub n_steps: usize,
    /// Number of blocks for the uncertainty estimate.
    pub n_blocks: usize,
    pub propagator: PropagatorConfig,
    pub master_seed: u64,
    /// Guess of the integral fixing the flat reference level; `None` means
    /// "use the domain volume" (reference level 0).
    pub e_trial: Option<f64>,
}

impl MorphRun {
    pub fn new(
        n_traj: usize,
        n_steps: usize,
        n_blocks: usize,
        propagator: PropagatorConfig,
        master_seed: u64,
        e_trial: Option<f64>,
    ) -> Result<Self, ConfigError> {
        let run = Self { n_traj, n_steps, n_blocks, propagator, master_seed, e_trial };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_traj == 0 {
            return Err(ConfigError::ZeroTrajectories);
        }
        if self.n_steps == 0 {
            return Err(ConfigError::ZeroSteps);
        }
        if self.n_blocks < 2 {
            return Err(ConfigError::InsufficientBlocks(self.n_blocks));
        }
        if self.n_traj % self.n_blocks != 0 {
            return Err(ConfigError::BlockMismatch { n_traj: self.n_traj, n_blocks: self.n_blocks });
        }
        let per_block = self.n_traj / self.n_blocks;
        if per_block < 2 {
            return Err(ConfigError::InsufficientBlockTrajectories {
                n_traj: self.n_traj,
                n_blocks: self.n_blocks,
                per_block,
            });
        }
        if let Some(e) = self.e_trial {
            if !(e > 0.0) || !e.is_finite() {
                return Err(DomainError::NonPositiveTrial(e).into());
            }
        }
        Ok(())
    }

    /// Trajectories per block.
    pub fn block_size(&self) -> usize {
        self.n_traj / self.n_blocks
    }

    /// Resolves the flat reference for a concrete domain.
    pub fn reference(&self, domain: &HyperRectangle) -> Result<FlatReference, DomainError> {
        match self.e_trial {
            Some(e) => FlatReference::from_trial(domain, e),
            None => Ok(FlatReference::from_volume(domain)),
        }
    }
}

/// Outcome of a single trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Accumulated morphing work.
    pub work: f64,
    pub moves_attempted: u64,
    pub moves_accepted: u64,
    pub final_point: Vec<f64>,
}

/// Quality flags attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    /// Mean move acceptance below 30%: the domain was likely explored poorly
    /// and the estimate may sit on a too-low plateau.
    LowAcceptance,
    /// `sigma / |value| >= 0.1`: the systematic bias of the work estimator is
    /// no longer negligible against the reported uncertainty.
    LargeRelativeSigma,
    /// Sign-split components nearly cancel (`|value| < sigma`); both
    /// components need much higher accuracy for the difference to be
    /// meaningful.
    Cancellation,
    /// The splitting floor `epsilon` was not small against the largest `|f|`
    /// seen along the trajectories; rerun with a smaller `epsilon`.
    EpsilonTooLarge,
}

/// Acceptance threshold (percent) below which [`Warning::LowAcceptance`] fires.
pub const LOW_ACCEPTANCE_PCT: f64 = 30.0;
/// Relative-sigma threshold at which [`Warning::LargeRelativeSigma`] fires.
pub const LARGE_RELATIVE_SIGMA: f64 = 0.1;

/// Integral estimate with uncertainty and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    /// Best estimate of the integral.
    pub value: f64,
    /// Standard deviation of the mean from block averaging.
    pub sigma: f64,
    /// Expected systematic shift of the finite-sample estimator,
    /// `-sigma^2 / (2 value)`; the estimate is on average low by this much.
    pub bias: f64,
    /// Mean percentage of accepted moves over all trajectories and steps.
    pub acceptance_pct: f64,
    /// Per-block morphing factors (empty for estimators that are not
    /// block-averaged, e.g. the baselines and the sign-split combination).
    pub block_factors: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl IntegralEstimate {
    /// Standard warning set for a value/sigma/acceptance triple.
    pub fn standard_warnings(value: f64, sigma: f64, acceptance_pct: f64) -> Vec<Warning> {
        let mut w = Vec::new();
        if acceptance_pct < LOW_ACCEPTANCE_PCT {
            w.push(Warning::LowAcceptance);
        }
        if sigma >= LARGE_RELATIVE_SIGMA * value.abs() {
            w.push(Warning::LargeRelativeSigma);
        }
        w
    }

    /// Bias estimate `-sigma^2 / (2 value)`, ordered to avoid overflow when
    /// `sigma` is huge.
    pub fn bias_estimate(value: f64, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        -(sigma / value) * sigma / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_volume() {
        let d = HyperRectangle::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.volume(), 1.0);
    }

    #[test]
    fn wide_cube_volume() {
        // [-3,3]^15 -> 6^15
        let d = HyperRectangle::cube(-3.0, 3.0, 15).unwrap();
        assert!((d.volume() - 4.701_849_845_76e11).abs() / 4.701_849_845_76e11 < 1e-12);
    }

    #[test]
    fn tern_product_volume() {
        // 30 copies of [-5,5]x[-0.002,-0.001]x[1,100]: (10 * 0.001 * 99)^30 = 0.99^30
        let d = HyperRectangle::repeated(&[(-5.0, 5.0), (-0.002, -0.001), (1.0, 100.0)], 30).unwrap();
        let expect = 0.99f64.powi(30);
        assert!((d.volume() - expect).abs() / expect < 1e-12);
        assert!((expect - 0.73970).abs() < 5e-5);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(
            HyperRectangle::new(vec![0.0], vec![1.0, 2.0]).unwrap_err(),
            DomainError::DimensionMismatch { lower: 1, upper: 2 }
        );
        assert!(matches!(
            HyperRectangle::new(vec![1.0], vec![1.0]).unwrap_err(),
            DomainError::DegenerateInterval { dim: 0, .. }
        ));
        // 400 decades overflows f64.
        assert_eq!(
            HyperRectangle::cube(0.0, 1e200, 2).unwrap_err(),
            DomainError::VolumeOverflow
        );
    }

    #[test]
    fn flat_reference_identity() {
        let cube = HyperRectangle::unit_cube(3);
        let r = FlatReference::from_trial(&cube, 1.0).unwrap();
        assert_eq!(r.level(), 0.0);
        assert_eq!(r.reference_integral(), 1.0);
    }

    #[test]
    fn flat_reference_from_paper_scale_guess() {
        let d = HyperRectangle::cube(-3.0, 3.0, 15).unwrap();
        let r = FlatReference::from_trial(&d, 1.213e26).unwrap();
        assert!((r.level() - (-33.1862)).abs() < 1e-2);
        assert_eq!(r.reference_integral(), 1.213e26);
    }

    #[test]
    fn flat_reference_small_volume() {
        let d = HyperRectangle::cube(0.0, 2.0, 3).unwrap(); // volume 8
        let r = FlatReference::from_trial(&d, 2.0).unwrap();
        assert!((r.level() - 4.0f64.ln()).abs() < 1e-14);
        assert_eq!(r.reference_integral(), 2.0);
    }

    #[test]
    fn reference_invariant_holds() {
        // e0 = volume * exp(-c) to 1e-14 relative for assorted guesses.
        let d = HyperRectangle::cube(-2.0, 5.0, 4).unwrap();
        for e_trial in [1e-8, 0.5, 3.0, 1e12] {
            let r = FlatReference::from_trial(&d, e_trial).unwrap();
            let recon = d.volume() * (-r.level()).exp();
            assert!((recon - r.reference_integral()).abs() <= 1e-14 * r.reference_integral());
        }
    }

    #[test]
    fn shifting_level_rescales_reference() {
        // Shifting c by delta multiplies e0 by exp(-delta).
        let d = HyperRectangle::cube(0.0, 2.0, 2).unwrap();
        let base = FlatReference::from_trial(&d, 1.7).unwrap();
        let delta = 0.9;
        let shifted = FlatReference::from_trial(&d, 1.7 * (-delta as f64).exp()).unwrap();
        assert!((shifted.level() - (base.level() + delta)).abs() < 1e-12);
        let rescaled = base.reference_integral() * (-delta as f64).exp();
        assert!((shifted.reference_integral() - rescaled).abs() <= 1e-14 * rescaled);
    }

    #[test]
    fn non_positive_trial_rejected() {
        let d = HyperRectangle::unit_cube(1);
        assert!(FlatReference::from_trial(&d, 0.0).is_err());
        assert!(FlatReference::from_trial(&d, -2.0).is_err());
        assert!(FlatReference::from_trial(&d, f64::NAN).is_err());
    }

    #[test]
    fn morph_run_validation() {
        let prop = PropagatorConfig::is_mc_uniform(0.1, 3).unwrap();
        assert!(MorphRun::new(100, 10, 50, prop.clone(), 1, None).is_ok());
        assert_eq!(
            MorphRun::new(100, 10, 1, prop.clone(), 1, None).unwrap_err(),
            ConfigError::InsufficientBlocks(1)
        );
        assert_eq!(
            MorphRun::new(101, 10, 50, prop.clone(), 1, None).unwrap_err(),
            ConfigError::BlockMismatch { n_traj: 101, n_blocks: 50 }
        );
        assert_eq!(
            MorphRun::new(50, 10, 50, prop, 1, None).unwrap_err(),
            ConfigError::InsufficientBlockTrajectories { n_traj: 50, n_blocks: 50, per_block: 1 }
        );
    }
}
