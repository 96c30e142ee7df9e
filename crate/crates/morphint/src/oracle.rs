//! Ground-truth machinery: adaptive tensor cubature for up to three
//! variables, exact product-lift to N dimensions, and the baseline stochastic
//! integrators used in failure comparisons.
//!
//! The cubature iterates a globally adaptive one-dimensional Gauss-Kronrod
//! (G15K31) rule per dimension, subdividing worst-error segments first. The
//! rule never evaluates interval endpoints, so integrable divergences at the
//! domain boundary are handled by plain subdivision; a non-finite sample at
//! an interior point aborts, since interior singularities are outside the
//! method's reach.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{HyperRectangle, IntegralEstimate};
use crate::integrand::Integrand;
use crate::numeric::CompensatedSum;
use crate::propagator;
use crate::rng::{self, branch};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("cubature supports 1 to 3 dimensions, got {0}")]
    UnsupportedDimension(usize),
    #[error("relative tolerance {0} is below the supported 1e-10")]
    ToleranceTooTight(f64),
    #[error("requested tolerance not reached: value {}, error bound {}", .partial.value, .partial.abs_error_bound)]
    ToleranceNotReached { partial: CubatureResult },
    #[error("integrand is not finite at an interior point {point:?}")]
    NonFiniteSample { point: Vec<f64> },
    #[error("lifted value overflows f64: sign {}, log10|v| = {log10_abs}", if *.negative { "-" } else { "+" })]
    Overflow { log10_abs: f64, negative: bool },
}

/// Result of an adaptive cubature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubatureResult {
    pub value: f64,
    /// Estimated absolute error bound.
    pub abs_error_bound: f64,
    /// Number of integrand evaluations.
    pub evaluations: u64,
}

// 7-point Gauss / 15-point Kronrod pair: positive Kronrod nodes (center
// first) and their weights; Gauss nodes are the even-index Kronrod nodes.
const GK_NODES: [f64; 8] = [
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
];

const GK_WEIGHTS: [f64; 8] = [
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
];

const GAUSS_WEIGHTS: [f64; 4] = [
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
];

/// QUADPACK-style error rescaling from the raw `|K - G|` difference.
fn rescale_error(raw: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut err = raw.abs();
    if res_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / res_asc).powf(1.5);
        err = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    err
}

/// One G7K15 application on `[a, b]`. The evaluated function returns
/// `(value, inherited_error)`; the inherited error of nested inner
/// integrations is itself integrated alongside and added to the quadrature
/// error of this segment.
fn gk15<E>(
    f: &mut impl FnMut(f64) -> Result<(f64, f64), E>,
    a: f64,
    b: f64,
) -> Result<Segment, E> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let mut fv = [0.0f64; 15];
    let (fc, ec) = f(center)?;
    fv[0] = fc;
    let mut kronrod = GK_WEIGHTS[0] * fc;
    let mut gauss = GAUSS_WEIGHTS[0] * fc;
    let mut res_abs = GK_WEIGHTS[0] * fc.abs();
    let mut inherited = GK_WEIGHTS[0] * ec;

    for j in 1..8 {
        let off = half * GK_NODES[j];
        let (lo, elo) = f(center - off)?;
        let (hi, ehi) = f(center + off)?;
        fv[2 * j - 1] = lo;
        fv[2 * j] = hi;
        kronrod += GK_WEIGHTS[j] * (lo + hi);
        res_abs += GK_WEIGHTS[j] * (lo.abs() + hi.abs());
        inherited += GK_WEIGHTS[j] * (elo + ehi);
        if j % 2 == 0 {
            gauss += GAUSS_WEIGHTS[j / 2] * (lo + hi);
        }
    }

    let mean = kronrod * 0.5;
    let mut res_asc = GK_WEIGHTS[0] * (fc - mean).abs();
    for j in 1..8 {
        res_asc += GK_WEIGHTS[j] * ((fv[2 * j - 1] - mean).abs() + (fv[2 * j] - mean).abs());
    }

    let value = kronrod * half;
    let quad_err = rescale_error((kronrod - gauss) * half, res_abs * half, res_asc * half.abs());
    Ok(Segment { a, b, value, err: quad_err + inherited * half })
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

/// Globally adaptive 1-dim integration; refines the worst segment first.
/// Returns `(value, error_bound, converged)`.
fn adapt_1d<E>(
    f: &mut impl FnMut(f64) -> Result<(f64, f64), E>,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<(f64, f64, bool), E> {
    let target = |value: f64| (rel_tol * value.abs()).max(abs_tol);
    let mut segments = vec![gk15(f, a, b)?];
    loop {
        let mut value = CompensatedSum::new();
        let mut err = 0.0;
        for s in &segments {
            value.add(s.value);
            err += s.err;
        }
        let value = value.total();
        if err <= target(value) || segments.len() >= max_segments {
            return Ok((value, err, err <= target(value)));
        }
        // Worst segment; ties broken by position for determinism.
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.err.total_cmp(&y.err).then(y.a.total_cmp(&x.a)))
            .map(|(i, _)| i)
            .expect("non-empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval at floating resolution; put it back and stop refining.
            let mut out_val = CompensatedSum::new();
            let mut out_err = 0.0;
            for s in segments.iter().chain(std::iter::once(&seg)) {
                out_val.add(s.value);
                out_err += s.err;
            }
            let v = out_val.total();
            return Ok((v, out_err, out_err <= target(v)));
        }
        segments.push(gk15(f, seg.a, mid)?);
        segments.push(gk15(f, mid, seg.b)?);
    }
}

/// Fixed 15^dim tensor pass estimating the scale `integral of |f|`, used to
/// anchor absolute error floors for inner integrals whose own values cancel
/// to zero (a purely relative target is unreachable there).
fn abs_scale(
    f: &dyn Fn(&[f64]) -> f64,
    domain: &HyperRectangle,
    evaluations: &mut u64,
) -> Result<f64, OracleError> {
    fn sweep(
        f: &dyn Fn(&[f64]) -> f64,
        domain: &HyperRectangle,
        level: usize,
        point: &mut Vec<f64>,
        evaluations: &mut u64,
    ) -> Result<f64, OracleError> {
        let center = 0.5 * (domain.lower()[level] + domain.upper()[level]);
        let half = 0.5 * domain.width(level);
        let mut acc = 0.0;
        for j in 0..8 {
            for sign in [-1.0, 1.0] {
                if j == 0 && sign > 0.0 {
                    continue;
                }
                point[level] = center + sign * half * GK_NODES[j];
                let inner = if level == 0 {
                    *evaluations += 1;
                    let v = f(point);
                    if !v.is_finite() {
                        return Err(OracleError::NonFiniteSample { point: point.clone() });
                    }
                    v.abs()
                } else {
                    sweep(f, domain, level - 1, point, evaluations)?
                };
                acc += GK_WEIGHTS[j] * inner;
            }
        }
        Ok(acc * half)
    }
    let mut point = vec![0.0f64; domain.dim()];
    sweep(f, domain, domain.dim() - 1, &mut point, evaluations)
}

/// Per-level segment budgets; the outer level is allowed to refine more.
const MAX_SEGMENTS: usize = 6000;

/// Adaptive tensor cubature of `f` over a 1- to 3-dimensional domain.
///
/// On success the estimated error bound satisfies
/// `abs_error_bound <= rel_tol * |value|`. If the budget is exhausted first,
/// the best value is returned inside [`OracleError::ToleranceNotReached`].
pub fn cubature_fn(
    f: &dyn Fn(&[f64]) -> f64,
    domain: &HyperRectangle,
    rel_tol: f64,
) -> Result<CubatureResult, OracleError> {
    let dim = domain.dim();
    if dim == 0 || dim > 3 {
        return Err(OracleError::UnsupportedDimension(dim));
    }
    if rel_tol < 1e-10 {
        return Err(OracleError::ToleranceTooTight(rel_tol));
    }
    let mut evaluations = 0u64;
    let mut point = vec![0.0f64; dim];

    // Relative share of the tolerance per nesting depth (outermost first).
    // Inner shares shrink because their error mass survives outer
    // subdivision unchanged and sign cancellation inflates it against the
    // outer value.
    const SHARES: [f64; 3] = [0.5, 0.05, 0.01];
    let scale = abs_scale(f, domain, &mut evaluations)?.max(f64::MIN_POSITIVE);
    // Absolute floor for a level: its share of the total budget spread over
    // the measure of the outer coordinates it is embedded in. Inner
    // integrals that cancel to zero stop there instead of stalling on an
    // unreachable relative target.
    let abs_floor = move |level: usize, domain: &HyperRectangle| {
        let outer_measure: f64 = (level + 1..dim).map(|j| domain.width(j)).product();
        SHARES[dim - 1 - level] * rel_tol * scale / outer_measure
    };

    fn nest(
        f: &dyn Fn(&[f64]) -> f64,
        domain: &HyperRectangle,
        level: usize,
        point: &mut Vec<f64>,
        rel_tol: f64,
        abs_floor: &dyn Fn(usize, &HyperRectangle) -> f64,
        evaluations: &mut u64,
    ) -> Result<(f64, f64), OracleError> {
        let (a, b) = (domain.lower()[level], domain.upper()[level]);
        let dim = domain.dim();
        let rel = SHARES[dim - 1 - level] * rel_tol;
        let abs = abs_floor(level, domain);
        let (value, err, converged) = if level == 0 {
            adapt_1d(
                &mut |t: f64| {
                    point[0] = t;
                    *evaluations += 1;
                    let v = f(point);
                    if !v.is_finite() {
                        return Err(OracleError::NonFiniteSample { point: point.clone() });
                    }
                    Ok((v, 0.0))
                },
                a,
                b,
                rel,
                abs,
                MAX_SEGMENTS,
            )?
        } else {
            adapt_1d(
                &mut |t: f64| {
                    point[level] = t;
                    nest(f, domain, level - 1, point, rel_tol, abs_floor, evaluations)
                },
                a,
                b,
                rel,
                abs,
                MAX_SEGMENTS,
            )?
        };
        if !converged {
            // A stalled inner level would otherwise multiply outer work
            // without bound; abort with the best value seen.
            return Err(OracleError::ToleranceNotReached {
                partial: CubatureResult {
                    value,
                    abs_error_bound: err,
                    evaluations: *evaluations,
                },
            });
        }
        Ok((value, err))
    }

    let (value, abs_error_bound) =
        nest(f, domain, dim - 1, &mut point, rel_tol, &abs_floor, &mut evaluations)?;
    let result = CubatureResult { value, abs_error_bound, evaluations };
    if abs_error_bound > rel_tol * value.abs() {
        return Err(OracleError::ToleranceNotReached { partial: result });
    }
    Ok(result)
}

/// [`cubature_fn`] over an [`Integrand`] block.
pub fn cubature_3d(
    block: &dyn Integrand,
    domain: &HyperRectangle,
    rel_tol: f64,
) -> Result<CubatureResult, OracleError> {
    if block.dim() != domain.dim() {
        return Err(OracleError::UnsupportedDimension(block.dim()));
    }
    cubature_fn(&|x| block.value(x), domain, rel_tol)
}

/// Sign and decadic logarithm of a lifted product value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Log10Value {
    pub log10_abs: f64,
    pub negative: bool,
}

impl Log10Value {
    pub fn to_f64(self) -> Option<f64> {
        if self.log10_abs >= 308.0 {
            return None;
        }
        let v = 10f64.powf(self.log10_abs);
        Some(if self.negative { -v } else { v })
    }
}

/// Log-space lift of a 3-variable block integral to the `terns`-fold product:
/// `log10|result| = terns * log10|block|` exactly in double precision.
pub fn product_lift_log10(block_value: f64, terns: u32) -> Log10Value {
    Log10Value {
        log10_abs: terns as f64 * block_value.abs().log10(),
        negative: block_value < 0.0 && terns % 2 == 1,
    }
}

/// Lift of a block integral to the product over `terns` copies, with overflow
/// detection; overflowing values are reported through their logarithm.
pub fn product_lift(block_value: f64, terns: u32) -> Result<f64, OracleError> {
    let log = product_lift_log10(block_value, terns);
    if log.log10_abs >= 308.0 {
        return Err(OracleError::Overflow { log10_abs: log.log10_abs, negative: log.negative });
    }
    Ok(block_value.powi(terns as i32))
}

/// Plain sample-mean Monte Carlo baseline: `volume * mean(f)` over uniform
/// points, with `sigma = volume * std / sqrt(n)`.
pub fn baseline_sample_mean(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    n_points: usize,
    seed: u64,
) -> IntegralEstimate {
    assert!(n_points >= 1);
    let mut stream = rng::stream(rng::derive(rng::derive(seed, branch::BASELINE), 0));
    let dim = domain.dim();
    let mut x = vec![0.0f64; dim];
    // Welford keeps the mean exact for constant integrands.
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for n in 1..=n_points {
        for i in 0..dim {
            x[i] = domain.lower()[i] + stream.gen::<f64>() * domain.width(i);
        }
        let v = integrand.value(&x);
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let volume = domain.volume();
    let value = volume * mean;
    let sigma = if n_points > 1 {
        volume * (m2 / (n_points - 1) as f64).sqrt() / (n_points as f64).sqrt()
    } else {
        0.0
    };
    IntegralEstimate {
        value,
        sigma,
        bias: 0.0,
        acceptance_pct: 100.0,
        block_factors: Vec::new(),
        warnings: IntegralEstimate::standard_warnings(value, sigma, 100.0),
    }
}

/// Standard importance-sampling Monte Carlo baseline, without morphing.
///
/// Metropolis chains target the density proportional to `f`; the integral is
/// recovered from the flat-reference ratio (harmonic-mean) estimator
/// `E = volume / mean(1/f)` over all visited points, since
/// `<1/f>_{f/E} = volume / E`. The spread comes from splitting the samples
/// into blocks (the chains themselves, or 50 consecutive segments of a
/// single chain) and propagating the block spread of `mean(1/f)` through the
/// ratio. This estimator reproduces the textbook failure of direct IS-MC on
/// hard landscapes: early low-`f` samples inflate `mean(1/f)` and the result
/// collapses orders of magnitude below the true integral.
pub fn baseline_ismc(
    integrand: &dyn Integrand,
    domain: &HyperRectangle,
    n_chains: usize,
    n_steps: usize,
    delta_max: &[f64],
    seed: u64,
) -> IntegralEstimate {
    assert!(n_chains >= 1 && n_steps >= 1);
    let dim = domain.dim();
    let n_blocks = if n_chains == 1 { 50.min(n_steps).max(1) } else { n_chains };

    let mut block_means: Vec<f64> = Vec::new();
    let mut accepted = 0u64;
    let mut attempted = 0u64;
    let mut x = vec![0.0f64; dim];
    let mut proposal = vec![0.0f64; dim];

    for chain in 0..n_chains {
        let mut stream = rng::stream(rng::derive(
            rng::derive(seed, branch::BASELINE),
            1 + chain as u64,
        ));
        for i in 0..dim {
            x[i] = domain.lower()[i] + stream.gen::<f64>() * domain.width(i);
        }
        let mut u = integrand.potential(&x);
        let mut acc = CompensatedSum::new();
        let mut in_block = 0usize;
        let block_len = if n_chains == 1 { n_steps.div_ceil(n_blocks) } else { n_steps };
        for _ in 0..n_steps {
            let ok = propagator::metropolis_step(
                &mut x,
                &mut u,
                &mut |p| integrand.potential(p),
                delta_max,
                domain,
                &mut stream,
                &mut proposal,
            )
            .expect("step within domain");
            attempted += 1;
            if ok {
                accepted += 1;
            }
            // 1/f = exp(u)
            acc.add(u.exp());
            in_block += 1;
            if n_chains == 1 && in_block == block_len {
                block_means.push(acc.total() / in_block as f64);
                acc = CompensatedSum::new();
                in_block = 0;
            }
        }
        if in_block > 0 {
            block_means.push(acc.total() / in_block as f64);
        }
    }

    let volume = domain.volume();
    let inv_mean = crate::numeric::mean(&block_means);
    let value = volume / inv_mean;
    let m = block_means.len();
    let sigma = if m > 1 {
        let spread = crate::numeric::sample_std(&block_means) / (m as f64).sqrt();
        volume * spread / (inv_mean * inv_mean)
    } else {
        0.0
    };
    let acceptance_pct = 100.0 * accepted as f64 / attempted as f64;
    IntegralEstimate {
        value,
        sigma,
        bias: 0.0,
        acceptance_pct,
        block_factors: Vec::new(),
        warnings: IntegralEstimate::standard_warnings(value, sigma, acceptance_pct),
    }
}
