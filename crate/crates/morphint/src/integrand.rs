//! Integrand interface, built-in test functions, and expression-backed
//! integrands.
//!
//! The built-in family covers the benchmark set used throughout the crate:
//! three oscillatory 3-variable building blocks (`PhiA` strictly positive,
//! `PhiB` sign-changing, `PhiC` sign-changing with logarithmic divergences at
//! the boundary) that extend to `3*terns` dimensions as products, the Genz
//! continuous and Gaussian families, and a constant profile.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HyperRectangle;
use crate::expr::ExpressionProgram;

#[derive(Debug, Error, PartialEq)]
pub enum IntegrandError {
    #[error("unknown builtin integrand `{0}`")]
    UnknownName(String),
    #[error("bad parameters for {name}: {reason}")]
    BadParams { name: String, reason: String },
    #[error("the closed-form reference requires the unit hypercube")]
    UnsupportedDomain,
}

/// Whether an integrand is guaranteed positive on the domain interior.
///
/// Sign-changing integrands cannot be fed to the morphing engine directly;
/// they go through the sign-splitting decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signedness {
    StrictlyPositive,
    MaySignChange,
}

/// Evaluator of an integrand `f`, its pseudo-potential `u = -ln f`, and
/// optionally the gradients of both.
///
/// Evaluators are pure and stateless after construction; concurrent
/// evaluation from many threads requires no synchronization.
pub trait Integrand: Send + Sync {
    fn dim(&self) -> usize;

    fn signedness(&self) -> Signedness;

    /// `f(x)`.
    fn value(&self, x: &[f64]) -> f64;

    /// `u(x) = -ln f(x)`; `+inf` wherever `f(x) <= 0` or is NaN, so that a
    /// Metropolis move into such a point is always rejected.
    fn potential(&self, x: &[f64]) -> f64 {
        let f = self.value(x);
        if f > 0.0 {
            -f.ln()
        } else {
            f64::INFINITY
        }
    }

    /// Whether the gradient methods below are usable.
    fn has_gradient(&self) -> bool {
        false
    }

    /// `grad u(x)` into `out`. Entries may be non-finite where `u` is
    /// undefined; the Langevin propagator treats that as a trajectory abort.
    fn grad_potential(&self, _x: &[f64], _out: &mut [f64]) {
        unimplemented!("integrand does not provide a gradient")
    }

    /// `grad f(x)` into `out`.
    fn grad_value(&self, _x: &[f64], _out: &mut [f64]) {
        unimplemented!("integrand does not provide a gradient")
    }

    /// `u(x)` returned and `grad u(x)` written in one pass; the Langevin hot
    /// path. Implementations that can share work should override.
    fn potential_and_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.grad_potential(x, out);
        self.potential(x)
    }

    /// `f(x)` returned and `grad f(x)` written in one pass.
    fn value_and_grad_value(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.grad_value(x, out);
        self.value(x)
    }
}

/// Names of the built-in integrands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinName {
    PhiA,
    PhiB,
    PhiC,
    GenzC0,
    GenzGaussian,
    Constant,
}

impl FromStr for BuiltinName {
    type Err = IntegrandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "phi_a" => Self::PhiA,
            "phi_b" => Self::PhiB,
            "phi_c" => Self::PhiC,
            "genz_c0" => Self::GenzC0,
            "genz_gaussian" => Self::GenzGaussian,
            "constant" => Self::Constant,
            other => return Err(IntegrandError::UnknownName(other.to_string())),
        })
    }
}

impl BuiltinName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PhiA => "phi_a",
            Self::PhiB => "phi_b",
            Self::PhiC => "phi_c",
            Self::GenzC0 => "genz_c0",
            Self::GenzGaussian => "genz_gaussian",
            Self::Constant => "constant",
        }
    }

    /// Dimension of the integrand for a given repetition count: the phi
    /// blocks take 3 variables per tern, the rest one per count.
    pub fn dim_for(self, count: usize) -> usize {
        match self {
            Self::PhiA | Self::PhiB | Self::PhiC => 3 * count,
            _ => count,
        }
    }

    /// Conventional benchmark domain for this integrand.
    pub fn default_domain(self, count: usize) -> HyperRectangle {
        match self {
            Self::PhiA | Self::PhiB => HyperRectangle::cube(-3.0, 3.0, 3 * count).expect("valid"),
            Self::PhiC => {
                HyperRectangle::repeated(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0)], count).expect("valid")
            }
            Self::GenzC0 | Self::GenzGaussian | Self::Constant => HyperRectangle::unit_cube(count),
        }
    }
}

/// Parameter map for the builtin constructor.
pub type Params = BTreeMap<String, f64>;

/// Constructs a built-in integrand.
///
/// `count` is the number of terns for the phi blocks (dimension `3*count`)
/// and the dimension itself for the Genz and constant families. Recognized
/// parameters: `k` (constant level, default 0), `a` (Genz shape, uniform
/// across dimensions, default 1), `u` (Genz shift in `[0,1]`, default 0.5).
pub fn builtin(
    name: BuiltinName,
    count: usize,
    params: &Params,
) -> Result<Arc<dyn Integrand>, IntegrandError> {
    if count == 0 {
        return Err(IntegrandError::BadParams {
            name: name.as_str().into(),
            reason: "count must be positive".into(),
        });
    }
    let allowed: &[&str] = match name {
        BuiltinName::Constant => &["k"],
        BuiltinName::GenzC0 | BuiltinName::GenzGaussian => &["a", "u"],
        _ => &[],
    };
    if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(IntegrandError::BadParams {
            name: name.as_str().into(),
            reason: format!("unexpected parameter `{key}`"),
        });
    }
    Ok(match name {
        BuiltinName::PhiA => Arc::new(PhiProduct { kind: PhiKind::A, terns: count }),
        BuiltinName::PhiB => Arc::new(PhiProduct { kind: PhiKind::B, terns: count }),
        BuiltinName::PhiC => Arc::new(PhiProduct { kind: PhiKind::C, terns: count }),
        BuiltinName::Constant => {
            let level = params.get("k").copied().unwrap_or(0.0);
            if !level.is_finite() {
                return Err(IntegrandError::BadParams {
                    name: "constant".into(),
                    reason: "k must be finite".into(),
                });
            }
            Arc::new(ConstantIntegrand { level, dim: count })
        }
        BuiltinName::GenzC0 | BuiltinName::GenzGaussian => {
            let shape = params.get("a").copied().unwrap_or(1.0);
            let shift = params.get("u").copied().unwrap_or(0.5);
            if !(shape >= 0.0) || !shape.is_finite() {
                return Err(IntegrandError::BadParams {
                    name: name.as_str().into(),
                    reason: "shape `a` must be >= 0".into(),
                });
            }
            if !(0.0..=1.0).contains(&shift) {
                return Err(IntegrandError::BadParams {
                    name: name.as_str().into(),
                    reason: "shift `u` must lie in [0,1]".into(),
                });
            }
            Arc::new(GenzIntegrand {
                gaussian: name == BuiltinName::GenzGaussian,
                shape: vec![shape; count],
                shift: vec![shift; count],
            })
        }
    })
}

/// Exact integral of a Genz integrand over the unit hypercube, from the
/// closed-form product of one-dimensional primitives.
pub fn genz_reference(
    name: BuiltinName,
    count: usize,
    params: &Params,
    domain: &HyperRectangle,
) -> Result<f64, IntegrandError> {
    if !matches!(name, BuiltinName::GenzC0 | BuiltinName::GenzGaussian) {
        return Err(IntegrandError::BadParams {
            name: name.as_str().into(),
            reason: "closed form exists only for the Genz families".into(),
        });
    }
    let unit = domain.dim() == count
        && domain.lower().iter().all(|&l| l == 0.0)
        && domain.upper().iter().all(|&u| u == 1.0);
    if !unit {
        return Err(IntegrandError::UnsupportedDomain);
    }
    let a = params.get("a").copied().unwrap_or(1.0);
    let u = params.get("u").copied().unwrap_or(0.5);
    let one_dim = match name {
        BuiltinName::GenzC0 => {
            if a == 0.0 {
                1.0
            } else {
                (2.0 - (-a * u).exp() - (-a * (1.0 - u)).exp()) / a
            }
        }
        BuiltinName::GenzGaussian => {
            if a == 0.0 {
                1.0
            } else {
                use statrs::function::erf::erf;
                core::f64::consts::PI.sqrt() / (2.0 * a) * (erf(a * (1.0 - u)) + erf(a * u))
            }
        }
        _ => unreachable!(),
    };
    Ok(one_dim.powi(count as i32))
}

// ---------------------------------------------------------------------------
// phi building blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhiKind {
    A,
    B,
    C,
}

/// Product of 3-variable building blocks over consecutive terns.
struct PhiProduct {
    kind: PhiKind,
    terns: usize,
}

/// Pseudo-potential of one `phi_A` tern:
/// `10 cos(2 x1 - 0.5 x2^3 + 3 x3) + 5 cos^2(4 x1^2 + 8 x2 + 2 x3)`.
#[inline]
fn phi_a_tern_u(t: &[f64]) -> f64 {
    let a = 2.0 * t[0] - 0.5 * t[1] * t[1] * t[1] + 3.0 * t[2];
    let b = 4.0 * t[0] * t[0] + 8.0 * t[1] + 2.0 * t[2];
    let cb = b.cos();
    10.0 * a.cos() + 5.0 * cb * cb
}

/// Same plus the gradient of the tern potential into `g[0..3]`.
#[inline]
fn phi_a_tern_u_grad(t: &[f64], g: &mut [f64]) -> f64 {
    let a = 2.0 * t[0] - 0.5 * t[1] * t[1] * t[1] + 3.0 * t[2];
    let b = 4.0 * t[0] * t[0] + 8.0 * t[1] + 2.0 * t[2];
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let du_da = -10.0 * sa;
    let du_db = -10.0 * cb * sb;
    g[0] = du_da * 2.0 + du_db * (8.0 * t[0]);
    g[1] = du_da * (-1.5 * t[1] * t[1]) + du_db * 8.0;
    g[2] = du_da * 3.0 + du_db * 2.0;
    10.0 * ca + 5.0 * cb * cb
}

/// Value of one `phi_B` tern: `phi_A - exp(-10 sin(-0.3 x1^2 + 4 x2 + 0.5 x3^3))`.
#[inline]
fn phi_b_tern(t: &[f64]) -> f64 {
    let g = -0.3 * t[0] * t[0] + 4.0 * t[1] + 0.5 * t[2] * t[2] * t[2];
    (-phi_a_tern_u(t)).exp() - (-10.0 * g.sin()).exp()
}

/// Value and gradient of one `phi_B` tern.
#[inline]
fn phi_b_tern_grad(t: &[f64], grad: &mut [f64]) -> f64 {
    let mut gu = [0.0; 3];
    let ua = phi_a_tern_u_grad(t, &mut gu);
    let fa = (-ua).exp();
    let g = -0.3 * t[0] * t[0] + 4.0 * t[1] + 0.5 * t[2] * t[2] * t[2];
    let (sg, cg) = g.sin_cos();
    let e = (-10.0 * sg).exp();
    // d/dx [-exp(-10 sin g)] = 10 cos(g) exp(-10 sin g) * dg/dx
    let k = 10.0 * cg * e;
    grad[0] = -fa * gu[0] + k * (-0.6 * t[0]);
    grad[1] = -fa * gu[1] + k * 4.0;
    grad[2] = -fa * gu[2] + k * (1.5 * t[2] * t[2]);
    fa - e
}

/// Value of one `phi_C` tern: `-phi_A * ln(x1 x2 x3)`, with the logarithm of
/// the product accumulated as a sum of logarithms so near-zero coordinates do
/// not underflow.
#[inline]
fn phi_c_tern(t: &[f64]) -> f64 {
    let l = t[0].ln() + t[1].ln() + t[2].ln();
    -(-phi_a_tern_u(t)).exp() * l
}

#[inline]
fn phi_c_tern_grad(t: &[f64], grad: &mut [f64]) -> f64 {
    let mut gu = [0.0; 3];
    let ua = phi_a_tern_u_grad(t, &mut gu);
    let fa = (-ua).exp();
    let l = t[0].ln() + t[1].ln() + t[2].ln();
    // d/dx [-fa * l] = fa * grad_u * l - fa / x
    grad[0] = fa * (gu[0] * l - 1.0 / t[0]);
    grad[1] = fa * (gu[1] * l - 1.0 / t[1]);
    grad[2] = fa * (gu[2] * l - 1.0 / t[2]);
    -fa * l
}

impl Integrand for PhiProduct {
    fn dim(&self) -> usize {
        3 * self.terns
    }

    fn signedness(&self) -> Signedness {
        match self.kind {
            PhiKind::A => Signedness::StrictlyPositive,
            PhiKind::B | PhiKind::C => Signedness::MaySignChange,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut product = 1.0;
        for t in x.chunks_exact(3) {
            product *= match self.kind {
                PhiKind::A => (-phi_a_tern_u(t)).exp(),
                PhiKind::B => phi_b_tern(t),
                PhiKind::C => phi_c_tern(t),
            };
        }
        product
    }

    fn potential(&self, x: &[f64]) -> f64 {
        match self.kind {
            // The positive block has an analytic potential: terns add.
            PhiKind::A => x.chunks_exact(3).map(phi_a_tern_u).sum(),
            _ => {
                let f = self.value(x);
                if f > 0.0 {
                    -f.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn grad_potential(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            PhiKind::A => {
                for (t, g) in x.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
                    phi_a_tern_u_grad(t, g);
                }
            }
            _ => {
                let f = self.value_and_grad_value(x, out);
                for g in out.iter_mut() {
                    *g = -*g / f;
                }
            }
        }
    }

    fn grad_value(&self, x: &[f64], out: &mut [f64]) {
        self.value_and_grad_value(x, out);
    }

    fn potential_and_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match self.kind {
            PhiKind::A => {
                let mut u = 0.0;
                for (t, g) in x.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
                    u += phi_a_tern_u_grad(t, g);
                }
                u
            }
            _ => {
                let f = self.value_and_grad_value(x, out);
                for g in out.iter_mut() {
                    *g = -*g / f;
                }
                if f > 0.0 {
                    -f.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn value_and_grad_value(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match self.kind {
            PhiKind::A => {
                let u = self.potential_and_grad(x, out);
                let f = (-u).exp();
                for g in out.iter_mut() {
                    *g *= -f;
                }
                return f;
            }
            _ => {}
        }
        // Signed product: per-tern values and gradients combined with
        // prefix/suffix products, which stays correct at tern zeros.
        let terns = self.terns;
        let mut values = vec![0.0f64; terns];
        for (k, t) in x.chunks_exact(3).enumerate() {
            let g = &mut out[3 * k..3 * k + 3];
            values[k] = match self.kind {
                PhiKind::B => phi_b_tern_grad(t, g),
                PhiKind::C => phi_c_tern_grad(t, g),
                PhiKind::A => unreachable!(),
            };
        }
        let mut prefix = vec![1.0f64; terns + 1];
        for k in 0..terns {
            prefix[k + 1] = prefix[k] * values[k];
        }
        let mut suffix = vec![1.0f64; terns + 1];
        for k in (0..terns).rev() {
            suffix[k] = suffix[k + 1] * values[k];
        }
        for k in 0..terns {
            let others = prefix[k] * suffix[k + 1];
            for g in out[3 * k..3 * k + 3].iter_mut() {
                *g *= others;
            }
        }
        prefix[terns]
    }
}

// ---------------------------------------------------------------------------
// Constant and Genz
// ---------------------------------------------------------------------------

/// `f = exp(-level)` everywhere.
struct ConstantIntegrand {
    level: f64,
    dim: usize,
}

impl Integrand for ConstantIntegrand {
    fn dim(&self) -> usize {
        self.dim
    }

    fn signedness(&self) -> Signedness {
        Signedness::StrictlyPositive
    }

    fn value(&self, _x: &[f64]) -> f64 {
        (-self.level).exp()
    }

    fn potential(&self, _x: &[f64]) -> f64 {
        self.level
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn grad_potential(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_value(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Genz continuous (`exp(-sum a_i |x_i - u_i|)`) or Gaussian
/// (`exp(-sum a_i^2 (x_i - u_i)^2)`) family.
struct GenzIntegrand {
    gaussian: bool,
    shape: Vec<f64>,
    shift: Vec<f64>,
}

impl Integrand for GenzIntegrand {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn signedness(&self) -> Signedness {
        Signedness::StrictlyPositive
    }

    fn value(&self, x: &[f64]) -> f64 {
        (-self.potential(x)).exp()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let mut u = 0.0;
        for i in 0..x.len() {
            let d = x[i] - self.shift[i];
            u += if self.gaussian {
                self.shape[i] * self.shape[i] * d * d
            } else {
                self.shape[i] * d.abs()
            };
        }
        u
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn grad_potential(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let d = x[i] - self.shift[i];
            out[i] = if self.gaussian {
                2.0 * self.shape[i] * self.shape[i] * d
            } else {
                self.shape[i] * d.signum() * if d == 0.0 { 0.0 } else { 1.0 }
            };
        }
    }

    fn grad_value(&self, x: &[f64], out: &mut [f64]) {
        let f = self.value(x);
        self.grad_potential(x, out);
        for g in out.iter_mut() {
            *g *= -f;
        }
    }
}

// ---------------------------------------------------------------------------
// Expression-backed integrands
// ---------------------------------------------------------------------------

/// Integrand evaluating a parsed expression; the pseudo-potential gradient
/// comes from central finite differences with per-dimension step
/// `h_i = max(1e-6, 1e-8 |x_i|)`.
pub struct ExpressionIntegrand {
    program: ExpressionProgram,
    signedness: Signedness,
}

impl ExpressionIntegrand {
    pub fn new(program: ExpressionProgram, signedness: Signedness) -> Self {
        Self { program, signedness }
    }

    pub fn program(&self) -> &ExpressionProgram {
        &self.program
    }

    #[inline]
    fn fd_step(xi: f64) -> f64 {
        (1e-8 * xi.abs()).max(1e-6)
    }

    fn central_diff(&self, x: &[f64], out: &mut [f64], eval: impl Fn(&Self, &[f64]) -> f64) {
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            let h = Self::fd_step(x[i]);
            probe[i] = x[i] + h;
            let hi = eval(self, &probe);
            probe[i] = x[i] - h;
            let lo = eval(self, &probe);
            probe[i] = x[i];
            out[i] = (hi - lo) / (2.0 * h);
        }
    }
}

/// Builds an integrand from a parsed expression program.
pub fn from_expression(program: ExpressionProgram, signedness: Signedness) -> Arc<dyn Integrand> {
    Arc::new(ExpressionIntegrand::new(program, signedness))
}

impl Integrand for ExpressionIntegrand {
    fn dim(&self) -> usize {
        self.program.dim()
    }

    fn signedness(&self) -> Signedness {
        self.signedness
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.program.eval(x)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn grad_potential(&self, x: &[f64], out: &mut [f64]) {
        self.central_diff(x, out, |s, p| s.potential(p));
    }

    fn grad_value(&self, x: &[f64], out: &mut [f64]) {
        self.central_diff(x, out, |s, p| s.value(p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn params() -> Params {
        Params::new()
    }

    #[test]
    fn phi_a_origin_value() {
        // exponent at the origin: -10 cos 0 - 5 cos^2 0 = -15
        let f = builtin(BuiltinName::PhiA, 1, &params()).unwrap();
        assert!((f.potential(&[0.0, 0.0, 0.0]) - 15.0).abs() < 1e-12);
        assert!((f.value(&[0.0, 0.0, 0.0]) - (-15.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn constant_builtin() {
        let mut p = params();
        p.insert("k".into(), 2.0);
        let f = builtin(BuiltinName::Constant, 3, &p).unwrap();
        assert_eq!(f.potential(&[0.3, 0.4, 0.5]), 2.0);
        assert!((f.value(&[0.3, 0.4, 0.5]) - (-2.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn phi_c_zero_at_unit_product() {
        // ln(x1 x2 x3) vanishes when the product is 1.
        let f = builtin(BuiltinName::PhiC, 1, &params()).unwrap();
        assert_eq!(f.value(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(f.value(&[0.5, 2.0, 1.0]), 0.0);
        assert_eq!(f.potential(&[1.0, 1.0, 1.0]), f64::INFINITY);
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = params();
        p.insert("zz".into(), 1.0);
        assert!(matches!(
            builtin(BuiltinName::PhiA, 1, &p).err(),
            Some(IntegrandError::BadParams { .. })
        ));
        assert!(matches!(
            builtin(BuiltinName::PhiA, 0, &params()).err(),
            Some(IntegrandError::BadParams { .. })
        ));
        assert_eq!(
            BuiltinName::from_str("phi_z").unwrap_err(),
            IntegrandError::UnknownName("phi_z".into())
        );
    }

    #[test]
    fn phi_a_product_structure_is_exact() {
        let one = builtin(BuiltinName::PhiA, 1, &params()).unwrap();
        let two = builtin(BuiltinName::PhiA, 2, &params()).unwrap();
        let mut stream = rng::stream(17);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| stream.gen_range(-3.0..3.0)).collect();
            let f1 = one.value(&x[0..3]);
            let f2 = one.value(&x[3..6]);
            assert_eq!(two.value(&x), f1 * f2);
            let u = two.potential(&x);
            let u12 = one.potential(&x[0..3]) + one.potential(&x[3..6]);
            assert!((u - u12).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn potential_matches_value_where_positive() {
        // |u + ln f| <= 1e-10  0(1 + |u|) wherever f > 0.
        let mut stream = rng::stream(23);
        for (name, terns) in [(BuiltinName::PhiA, 2), (BuiltinName::PhiB, 2), (BuiltinName::PhiC, 1)] {
            let f = builtin(name, terns, &params()).unwrap();
            let domain = name.default_domain(terns);
            let mut checked = 0;
            while checked < 100 {
                let x: Vec<f64> = (0..f.dim())
                    .map(|i| {
                        let w = domain.width(i);
                        domain.lower()[i] + stream.gen::<f64>() * w
                    })
                    .collect();
                let v = f.value(&x);
                if v > 0.0 {
                    let u = f.potential(&x);
                    assert!((u + v.ln()).abs() <= 1e-10 * (1.0 + u.abs()));
                    checked += 1;
                }
            }
        }
    }

    /// Central finite difference of the potential, the independent check for
    /// every analytic gradient.
    fn fd_grad(f: &dyn Integrand, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let hi = f.potential(&probe);
                probe[i] = x[i] - h;
                let lo = f.potential(&probe);
                probe[i] = x[i];
                (hi - lo) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cases = [
            (BuiltinName::PhiA, 2),
            (BuiltinName::PhiB, 2),
            (BuiltinName::PhiC, 1),
            (BuiltinName::GenzGaussian, 4),
            (BuiltinName::GenzC0, 4),
            (BuiltinName::Constant, 3),
        ];
        let mut stream = rng::stream(31);
        for (name, count) in cases {
            let mut p = params();
            if matches!(name, BuiltinName::GenzC0 | BuiltinName::GenzGaussian) {
                p.insert("a".into(), 2.0);
                p.insert("u".into(), 0.35);
            }
            let f = builtin(name, count, &p).unwrap();
            let domain = name.default_domain(count);
            let mut analytic = vec![0.0; f.dim()];
            let mut checked = 0;
            while checked < 100 {
                // Interior points away from boundaries and kinks.
                let x: Vec<f64> = (0..f.dim())
                    .map(|i| {
                        let w = domain.width(i);
                        domain.lower()[i] + (0.1 + 0.8 * stream.gen::<f64>()) * w
                    })
                    .collect();
                if f.value(&x) <= 0.0 && !matches!(name, BuiltinName::PhiA | BuiltinName::Constant) {
                    continue; // potential undefined here
                }
                f.grad_potential(&x, &mut analytic);
                let numeric = fd_grad(f.as_ref(), &x, 1e-6);
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!(
                        (a - n).abs() <= 1e-5 * (1.0 + a.abs().max(n.abs())),
                        "{name:?}: {a} vs {n} at {x:?}"
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn expression_matches_builtins_at_random_points() {
        let sources = [
            (
                BuiltinName::PhiA,
                "exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3) - 5.0*cos(4*x1^2 + 8*x2 + 2*x3)^2)",
            ),
            (
                BuiltinName::PhiB,
                "-exp(-10*sin(-0.3*x1^2 + 4*x2 + 0.5*x3^3)) \
                 + exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3) - 5.0*cos(4*x1^2 + 8*x2 + 2*x3)^2)",
            ),
            (
                BuiltinName::PhiC,
                "-exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3) - 5.0*cos(4*x1^2 + 8*x2 + 2*x3)^2) \
                 * ln(x1*x2*x3)",
            ),
        ];
        let mut stream = rng::stream(47);
        for (name, src) in sources {
            let b = builtin(name, 1, &params()).unwrap();
            let domain = name.default_domain(1);
            let program = ExpressionProgram::parse(src, 3).unwrap();
            let e = from_expression(program, b.signedness());
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3)
                    .map(|i| domain.lower()[i] + stream.gen::<f64>() * domain.width(i))
                    .collect();
                let fb = b.value(&x);
                let fe = e.value(&x);
                assert!(
                    (fb - fe).abs() <= 1e-10 * (1.0 + fb.abs()),
                    "{name:?} at {x:?}: {fb} vs {fe}"
                );
            }
        }
    }

    #[test]
    fn expression_phi_a_potential_at_origin() {
        let src = "exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3) - 5.0*cos(4*x1^2 + 8*x2 + 2*x3)^2)";
        let e = from_expression(ExpressionProgram::parse(src, 3).unwrap(), Signedness::StrictlyPositive);
        let b = builtin(BuiltinName::PhiA, 1, &params()).unwrap();
        let xe = e.potential(&[0.0; 3]);
        let xb = b.potential(&[0.0; 3]);
        assert!((xe - xb).abs() < 1e-10);
        assert!((xe - 15.0).abs() < 1e-10);
    }

    #[test]
    fn expression_constant_and_negative_guard() {
        let one = from_expression(ExpressionProgram::parse("1", 2).unwrap(), Signedness::StrictlyPositive);
        assert_eq!(one.value(&[0.2, 0.9]), 1.0);
        assert_eq!(one.potential(&[0.2, 0.9]), 0.0);

        let ident =
            from_expression(ExpressionProgram::parse("x1", 1).unwrap(), Signedness::MaySignChange);
        assert_eq!(ident.value(&[-2.0]), -2.0);
        assert_eq!(ident.potential(&[-2.0]), f64::INFINITY);
    }

    #[test]
    fn genz_reference_values() {
        let cube1 = HyperRectangle::unit_cube(1);
        let mut p = params();
        p.insert("a".into(), 0.0);
        assert_eq!(genz_reference(BuiltinName::GenzGaussian, 1, &p, &cube1).unwrap(), 1.0);

        let mut p = params();
        p.insert("a".into(), 1.0);
        p.insert("u".into(), 0.0);
        let v = genz_reference(BuiltinName::GenzC0, 1, &p, &cube1).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        assert!((v - 0.6321206).abs() < 1e-7);

        let bad = HyperRectangle::cube(0.0, 2.0, 1).unwrap();
        assert_eq!(
            genz_reference(BuiltinName::GenzC0, 1, &p, &bad).unwrap_err(),
            IntegrandError::UnsupportedDomain
        );
    }
}
