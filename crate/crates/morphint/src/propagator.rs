//! Single-step Markov moves at a fixed morphing parameter.
//!
//! Two propagators are available: Metropolis moves with a uniform box
//! proposal, and overdamped Langevin steps with a constant scalar diffusion
//! coefficient. Both apply reflecting conditions at the domain boundaries.
//! Steps are pure functions of `(state, config, rng stream)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HyperRectangle;
use crate::rng::Stream;

#[derive(Debug, Error, PartialEq)]
pub enum PropagatorError {
    #[error("max move length must be positive in every dimension (dim {0})")]
    NonPositiveDelta(usize),
    #[error("diffusion coefficient must be positive, got {0}")]
    NonPositiveDiffusion(f64),
    #[error("delta_max has {got} entries but the domain has {expected} dimensions")]
    DeltaDimensionMismatch { got: usize, expected: usize },
    #[error("non-finite gradient component {component} at the current point")]
    NonFiniteGradient { component: usize },
    #[error("coordinate {dim} needed more than {MAX_FOLDS} reflections; the step is pathologically large")]
    ExcessiveReflection { dim: usize },
}

/// Reflection folds allowed per coordinate before the step is declared
/// pathological.
pub const MAX_FOLDS: u32 = 64;

/// Propagator selection and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropagatorConfig {
    /// Metropolis moves, uniform in the axis-aligned box of half-widths
    /// `delta_max`.
    IsMc { delta_max: Vec<f64> },
    /// Overdamped Langevin steps with constant scalar diffusion. Requires an
    /// integrand gradient.
    Langevin { diffusion: f64 },
}

impl PropagatorConfig {
    pub fn is_mc(delta_max: Vec<f64>) -> Result<Self, PropagatorError> {
        for (i, &d) in delta_max.iter().enumerate() {
            if !(d > 0.0) || !d.is_finite() {
                return Err(PropagatorError::NonPositiveDelta(i));
            }
        }
        Ok(Self::IsMc { delta_max })
    }

    pub fn is_mc_uniform(delta: f64, dim: usize) -> Result<Self, PropagatorError> {
        Self::is_mc(vec![delta; dim])
    }

    pub fn langevin(diffusion: f64) -> Result<Self, PropagatorError> {
        if !(diffusion > 0.0) || !diffusion.is_finite() {
            return Err(PropagatorError::NonPositiveDiffusion(diffusion));
        }
        Ok(Self::Langevin { diffusion })
    }

    /// Checks the configuration against a concrete domain.
    pub fn validate_for(&self, domain: &HyperRectangle) -> Result<(), PropagatorError> {
        match self {
            Self::IsMc { delta_max } => {
                if delta_max.len() != domain.dim() {
                    return Err(PropagatorError::DeltaDimensionMismatch {
                        got: delta_max.len(),
                        expected: domain.dim(),
                    });
                }
                for (i, &d) in delta_max.iter().enumerate() {
                    if !(d > 0.0) || !d.is_finite() {
                        return Err(PropagatorError::NonPositiveDelta(i));
                    }
                }
                Ok(())
            }
            Self::Langevin { diffusion } => {
                if !(*diffusion > 0.0) || !diffusion.is_finite() {
                    Err(PropagatorError::NonPositiveDiffusion(*diffusion))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Nudges a value off an interval endpoint into the open interior.
#[inline]
fn into_open(x: f64, lo: f64, hi: f64) -> f64 {
    // Integrands may diverge exactly on the boundary; trajectories stay in
    // the open interior.
    if x <= lo {
        next_up(lo)
    } else if x >= hi {
        next_down(hi)
    } else {
        x
    }
}

#[inline]
fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

#[inline]
fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Folds one coordinate into `(lo, hi)` by repeated mirror reflection.
#[inline]
fn reflect_coord(mut x: f64, lo: f64, hi: f64, dim: usize) -> Result<f64, PropagatorError> {
    let mut folds = 0;
    while x < lo || x > hi {
        if x < lo {
            x = 2.0 * lo - x;
        } else {
            x = 2.0 * hi - x;
        }
        folds += 1;
        if folds > MAX_FOLDS {
            return Err(PropagatorError::ExcessiveReflection { dim });
        }
    }
    Ok(into_open(x, lo, hi))
}

/// Reflects a proposal into the open interior of the domain, coordinate by
/// coordinate. Idempotent on interior points.
pub fn reflect(x: &mut [f64], domain: &HyperRectangle) -> Result<(), PropagatorError> {
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = reflect_coord(*xi, domain.lower()[i], domain.upper()[i], i)?;
    }
    Ok(())
}

/// One Metropolis move against the pseudo-potential `u_at`, which the caller
/// has already fixed at the current morphing parameter.
///
/// The proposal is uniform in the box of half-widths `delta_max` around `x`,
/// reflected into the domain; it is accepted with probability
/// `min(1, exp(-(u(x') - u(x))))`. A non-finite potential at the proposal is
/// an automatic rejection. Returns whether the move was accepted; `x` holds
/// the resulting point either way. `u_current` is the potential at the
/// incoming `x` and is updated on acceptance.
pub fn metropolis_step(
    x: &mut [f64],
    u_current: &mut f64,
    u_at: &mut dyn FnMut(&[f64]) -> f64,
    delta_max: &[f64],
    domain: &HyperRectangle,
    rng: &mut Stream,
    proposal: &mut [f64],
) -> Result<bool, PropagatorError> {
    for i in 0..x.len() {
        let jump = (2.0 * rng.gen::<f64>() - 1.0) * delta_max[i];
        proposal[i] = x[i] + jump;
    }
    reflect(proposal, domain)?;
    let u_new = u_at(proposal);
    let delta_u = u_new - *u_current;
    // Downhill moves are taken outright; uphill moves need the uniform draw
    // to fall under exp(-delta_u). NaN (e.g. inf - inf) rejects.
    let accepted = if delta_u <= 0.0 {
        true
    } else if delta_u.is_finite() {
        rng.gen::<f64>() < (-delta_u).exp()
    } else {
        false
    };
    if accepted {
        x.copy_from_slice(proposal);
        *u_current = u_new;
    }
    Ok(accepted)
}

/// One Euler step of the overdamped Langevin equation
/// `x' = x + dt * (-D * grad_u(x)) + sqrt(2 D dt) * g`, reflected into the
/// domain. `grad` must hold the pseudo-potential gradient at `x` for the
/// current morphing parameter; the divergence term of a position-dependent
/// diffusion matrix is identically zero here because `D` is a constant
/// scalar.
pub fn langevin_step(
    x: &mut [f64],
    grad: &[f64],
    diffusion: f64,
    dt: f64,
    domain: &HyperRectangle,
    rng: &mut Stream,
) -> Result<(), PropagatorError> {
    let noise_scale = (2.0 * diffusion * dt).sqrt();
    for i in 0..x.len() {
        if !grad[i].is_finite() {
            return Err(PropagatorError::NonFiniteGradient { component: i });
        }
        let g: f64 = rng.sample(StandardNormal);
        x[i] += dt * (-diffusion * grad[i]) + noise_scale * g;
    }
    reflect(x, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn unit_1d() -> HyperRectangle {
        HyperRectangle::unit_cube(1)
    }

    #[test]
    fn reflect_single_fold() {
        let d = unit_1d();
        let mut x = [1.2];
        reflect(&mut x, &d).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn reflect_multiple_folds() {
        // -2.3 -> 2.3 -> -0.3 -> 0.3
        let d = unit_1d();
        let mut x = [-2.3];
        reflect(&mut x, &d).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn reflect_is_idempotent_inside() {
        let d = unit_1d();
        let mut x = [0.5];
        reflect(&mut x, &d).unwrap();
        assert_eq!(x[0], 0.5);
    }

    #[test]
    fn reflect_keeps_points_off_the_boundary() {
        let d = unit_1d();
        for start in [0.0, 1.0, 2.0, -1.0] {
            let mut x = [start];
            reflect(&mut x, &d).unwrap();
            assert!(x[0] > 0.0 && x[0] < 1.0, "{start} mapped to {}", x[0]);
        }
    }

    #[test]
    fn reflect_rejects_pathological_steps() {
        let d = unit_1d();
        let mut x = [1e9];
        assert_eq!(
            reflect(&mut x, &d).unwrap_err(),
            PropagatorError::ExcessiveReflection { dim: 0 }
        );
    }

    #[test]
    fn downhill_always_accepted() {
        let d = unit_1d();
        let mut rng = rng::stream(7);
        let mut proposal = [0.0];
        for _ in 0..100 {
            let mut x = [0.5];
            let mut u = 1.0;
            // Potential drops by 1 everywhere away from the current point.
            let accepted = metropolis_step(
                &mut x,
                &mut u,
                &mut |_| 0.0,
                &[0.2],
                &d,
                &mut rng,
                &mut proposal,
            )
            .unwrap();
            assert!(accepted);
            assert_eq!(u, 0.0);
        }
    }

    #[test]
    fn flat_potential_acceptance_is_total() {
        let d = unit_1d();
        let mut rng = rng::stream(11);
        let mut x = [0.5];
        let mut u = 3.0;
        let mut proposal = [0.0];
        let mut accepted = 0u32;
        for _ in 0..10_000 {
            if metropolis_step(&mut x, &mut u, &mut |_| 3.0, &[0.3], &d, &mut rng, &mut proposal)
                .unwrap()
            {
                accepted += 1;
            }
        }
        assert_eq!(accepted, 10_000);
    }

    #[test]
    fn acceptance_law_at_ln_two() {
        // delta_u = ln 2 accepts with probability 1/2.
        let d = unit_1d();
        let mut rng = rng::stream(20260810);
        let mut proposal = [0.0];
        let n = 1_000_000u32;
        let mut accepted = 0u32;
        for _ in 0..n {
            let mut x = [0.5];
            let mut u = 0.0;
            if metropolis_step(
                &mut x,
                &mut u,
                &mut |_| 2f64.ln(),
                &[0.1],
                &d,
                &mut rng,
                &mut proposal,
            )
            .unwrap()
            {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.002, "rate {rate}");
    }

    #[test]
    fn infinite_potential_rejects() {
        let d = unit_1d();
        let mut rng = rng::stream(3);
        let mut x = [0.5];
        let mut u = 1.0;
        let mut proposal = [0.0];
        let accepted =
            metropolis_step(&mut x, &mut u, &mut |_| f64::INFINITY, &[0.3], &d, &mut rng, &mut proposal)
                .unwrap();
        assert!(!accepted);
        assert_eq!(x[0], 0.5);
        assert_eq!(u, 1.0);
    }

    #[test]
    fn langevin_free_diffusion_moments() {
        // grad = 0: displacement per step has mean 0 and variance 2 D dt.
        let d = HyperRectangle::cube(-100.0, 100.0, 1).unwrap();
        let diffusion = 0.3;
        let dt = 1e-5;
        let mut rng = rng::stream(99);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let mut x = [0.0];
            langevin_step(&mut x, &[0.0], diffusion, dt, &d, &mut rng).unwrap();
            sum += x[0];
            sum2 += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let expect = 2.0 * diffusion * dt;
        assert!(mean.abs() < 3.0 * (expect / n as f64).sqrt(), "mean {mean}");
        assert!((var - expect).abs() / expect < 0.01, "var {var} vs {expect}");
    }

    #[test]
    fn langevin_drift_term() {
        // u = x^2/2 in 1 dim: drift = -D * x * dt.
        let d = HyperRectangle::cube(-10.0, 10.0, 1).unwrap();
        let mut rng = rng::stream(1);
        let mut x = [2.0];
        // Zero noise is unreachable through the API; check the deterministic
        // part by subtracting the sampled noise reproduced from the same seed.
        let mut rng2 = rng.clone();
        langevin_step(&mut x, &[2.0], 1.0, 1e-3, &d, &mut rng).unwrap();
        use rand::Rng;
        let g: f64 = rng2.sample(rand_distr::StandardNormal);
        let noise = (2.0f64 * 1.0 * 1e-3).sqrt() * g;
        assert!(((x[0] - noise) - (2.0 - 2e-3)).abs() < 1e-12);
    }

    #[test]
    fn langevin_rejects_non_finite_gradient() {
        let d = unit_1d();
        let mut rng = rng::stream(5);
        let mut x = [0.5];
        assert_eq!(
            langevin_step(&mut x, &[f64::NAN], 1.0, 1e-3, &d, &mut rng).unwrap_err(),
            PropagatorError::NonFiniteGradient { component: 0 }
        );
    }

    #[test]
    fn config_validation() {
        assert!(PropagatorConfig::is_mc(vec![0.1, 0.2]).is_ok());
        assert_eq!(
            PropagatorConfig::is_mc(vec![0.1, 0.0]).unwrap_err(),
            PropagatorError::NonPositiveDelta(1)
        );
        assert!(PropagatorConfig::langevin(0.3).is_ok());
        assert!(PropagatorConfig::langevin(-1.0).is_err());
        let d = HyperRectangle::unit_cube(3);
        let c = PropagatorConfig::is_mc_uniform(0.1, 2).unwrap();
        assert!(matches!(
            c.validate_for(&d).unwrap_err(),
            PropagatorError::DeltaDimensionMismatch { got: 2, expected: 3 }
        ));
    }
}
