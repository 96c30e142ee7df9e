//! Stochastic integration of multidimensional integrals over hyper-rectangles.
//!
//! The estimator morphs the integrand from a flat reference profile while an
//! ensemble of Markov trajectories (Metropolis or overdamped Langevin moves
//! with reflecting boundaries) explores the domain. Each trajectory
//! accumulates the "computational work" of the morphing; by the
//! Jarzynski-equality / annealed-importance-sampling identity, the integral
//! equals the reference integral times the mean of `exp(-w)` over
//! trajectories. Block averaging of the trajectory ensemble provides the
//! statistical uncertainty.
//!
//! The crate also bundles the machinery needed around that estimator:
//! built-in test integrands and an expression parser for user-defined ones
//! ([`integrand`]), sign-splitting for integrands with zeros or sign changes
//! ([`splitting`]), a low-dimensional adaptive cubature plus baseline
//! integrators for validation ([`oracle`]), and a 17-significant-digit JSON
//! report writer ([`report`]).

pub mod domain;
pub mod engine;
pub mod expr;
pub mod integrand;
pub mod numeric;
pub mod oracle;
pub mod propagator;
pub mod report;
pub mod rng;
pub mod splitting;

pub use domain::{FlatReference, HyperRectangle, IntegralEstimate, MorphRun, TrajectoryRecord, Warning};
pub use engine::{MorphSchedule, WorkEnsemble};
pub use integrand::{Integrand, Signedness};
pub use propagator::PropagatorConfig;
