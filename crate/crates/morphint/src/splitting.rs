//! Sign-splitting of general integrands into two strictly positive
//! components.
//!
//! A function `f` with zeros or sign changes is decomposed as
//! `f = f_plus - f_minus` with `f_pm = (Phi(f) +- f) / 2` and the envelope
//! `Phi(f) = K sqrt(f^2 + eps^2)`. Since `Phi(f) > |f|` for `K >= 1` and
//! `eps > 0`, both components are positive and each can be integrated by the
//! morphing engine on its own; the results subtract and the uncertainties add
//! in quadrature. The decomposition may also be applied to positive
//! integrands outright.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{HyperRectangle, IntegralEstimate, MorphRun, Warning};
use crate::engine::{self, EngineError};
use crate::integrand::{Integrand, Signedness};
use crate::rng::{self, branch};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("bad split config: K must be >= 1 and epsilon > 0 (got K = {k}, epsilon = {epsilon})")]
    BadSplitConfig { k: f64, epsilon: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Envelope parameters of the splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Envelope factor; `K > 1` keeps both components structured (K = 1
    /// degenerates into flat plateaus of order `eps/2` that stall the
    /// exploration).
    pub k: f64,
    /// Small positive floor; checked a posteriori against the largest `|f|`
    /// seen along the trajectories.
    pub epsilon: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { k: 2.0, epsilon: 1e-5 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), SplitError> {
        if !(self.k >= 1.0) || !(self.epsilon > 0.0) || !self.k.is_finite() || !self.epsilon.is_finite()
        {
            return Err(SplitError::BadSplitConfig { k: self.k, epsilon: self.epsilon });
        }
        Ok(())
    }
}

/// Lock-free running maximum of `|f|`, shared by the two components of a
/// split. Non-negative doubles compare like their bit patterns, so a plain
/// integer `fetch_max` suffices; the result does not depend on evaluation
/// order.
#[derive(Debug, Default)]
struct MaxAbsTracker(AtomicU64);

impl MaxAbsTracker {
    #[inline]
    fn observe(&self, value: f64) {
        let abs = value.abs();
        if abs.is_finite() {
            self.0.fetch_max(abs.to_bits(), Ordering::Relaxed);
        }
    }

    fn max(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }
}

/// One component of the decomposition.
pub struct SplitComponent {
    parent: Arc<dyn Integrand>,
    cfg: SplitConfig,
    /// +1 for `f_plus`, -1 for `f_minus`.
    sign: f64,
    tracker: Arc<MaxAbsTracker>,
}

impl SplitComponent {
    /// `(K sqrt(f^2 + eps^2) + sign * f) / 2`, overflow-safe via `hypot`.
    #[inline]
    fn component(&self, f: f64) -> f64 {
        0.5 * (self.cfg.k * f.hypot(self.cfg.epsilon) + self.sign * f)
    }

    /// `d f_component / d f`.
    #[inline]
    fn component_slope(&self, f: f64) -> f64 {
        0.5 * (self.cfg.k * f / f.hypot(self.cfg.epsilon) + self.sign)
    }
}

impl Integrand for SplitComponent {
    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn signedness(&self) -> Signedness {
        Signedness::StrictlyPositive
    }

    fn value(&self, x: &[f64]) -> f64 {
        let f = self.parent.value(x);
        self.tracker.observe(f);
        self.component(f)
    }

    fn has_gradient(&self) -> bool {
        self.parent.has_gradient()
    }

    fn grad_potential(&self, x: &[f64], out: &mut [f64]) {
        self.potential_and_grad(x, out);
    }

    fn grad_value(&self, x: &[f64], out: &mut [f64]) {
        let f = self.parent.value_and_grad_value(x, out);
        self.tracker.observe(f);
        let slope = self.component_slope(f);
        for g in out.iter_mut() {
            *g *= slope;
        }
    }

    fn potential_and_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let f = self.parent.value_and_grad_value(x, out);
        self.tracker.observe(f);
        let v = self.component(f);
        let scale = -self.component_slope(f) / v;
        for g in out.iter_mut() {
            *g *= scale;
        }
        if v > 0.0 {
            -v.ln()
        } else {
            f64::INFINITY
        }
    }
}

/// The two positive components of a split, sharing one `max |f|` tracker.
pub struct SplitPair {
    pub plus: Arc<SplitComponent>,
    pub minus: Arc<SplitComponent>,
    tracker: Arc<MaxAbsTracker>,
}

impl SplitPair {
    /// Largest finite `|f|` of the parent observed through either component
    /// so far.
    pub fn max_abs_f(&self) -> f64 {
        self.tracker.max()
    }
}

/// Decomposes an integrand into its positive components.
pub fn split_components(
    integrand: Arc<dyn Integrand>,
    cfg: &SplitConfig,
) -> Result<SplitPair, SplitError> {
    cfg.validate()?;
    let tracker = Arc::new(MaxAbsTracker::default());
    Ok(SplitPair {
        plus: Arc::new(SplitComponent {
            parent: integrand.clone(),
            cfg: *cfg,
            sign: 1.0,
            tracker: tracker.clone(),
        }),
        minus: Arc::new(SplitComponent { parent: integrand, cfg: *cfg, sign: -1.0, tracker: tracker.clone() }),
        tracker,
    })
}

/// Result of a sign-split integration: the combined estimate plus both
/// component estimates and the envelope diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEstimate {
    /// `value = E_plus - E_minus`, `sigma = sqrt(sigma_plus^2 + sigma_minus^2)`.
    /// Block factors are left empty: the combined value is not itself a
    /// block-averaged morphing factor.
    pub estimate: IntegralEstimate,
    pub plus: IntegralEstimate,
    pub minus: IntegralEstimate,
    /// Largest `|f|` seen along the trajectories, for the epsilon check.
    pub max_abs_f: f64,
    pub epsilon: f64,
}

/// Integrates a possibly sign-changing integrand through the splitting.
///
/// Both component runs share the run configuration (including any tuned step
/// lengths) and derive disjoint seed branches from the same master seed, so
/// they are independent yet reproducible.
pub fn integrate_signed(
    integrand: Arc<dyn Integrand>,
    domain: &HyperRectangle,
    run: &MorphRun,
    cfg: &SplitConfig,
) -> Result<SplitEstimate, SplitError> {
    let pair = split_components(integrand, cfg)?;

    let mut plus_run = run.clone();
    plus_run.master_seed = rng::derive(run.master_seed, branch::SPLIT_PLUS);
    let mut minus_run = run.clone();
    minus_run.master_seed = rng::derive(run.master_seed, branch::SPLIT_MINUS);

    let plus = engine::run_integration(pair.plus.as_ref(), domain, &plus_run)?;
    let minus = engine::run_integration(pair.minus.as_ref(), domain, &minus_run)?;

    let value = plus.value - minus.value;
    let sigma = plus.sigma.hypot(minus.sigma);
    // Each component is biased by -sigma^2/2E; the difference inherits the
    // difference of the component biases.
    let bias = plus.bias - minus.bias;
    let acceptance_pct = 0.5 * (plus.acceptance_pct + minus.acceptance_pct);

    let max_abs_f = pair.max_abs_f();
    let mut warnings = IntegralEstimate::standard_warnings(value, sigma, acceptance_pct);
    if value.abs() < sigma {
        warnings.push(Warning::Cancellation);
    }
    if cfg.epsilon > 1e-3 * max_abs_f {
        warnings.push(Warning::EpsilonTooLarge);
    }

    Ok(SplitEstimate {
        estimate: IntegralEstimate {
            value,
            sigma,
            bias,
            acceptance_pct,
            block_factors: Vec::new(),
            warnings,
        },
        plus,
        minus,
        max_abs_f,
        epsilon: cfg.epsilon,
    })
}
