//! Numerical toolkit for linear delay equations driven by a Stieltjes measure
//! with multiplicative impulses,
//!
//! ```text
//! Dy = -p(t) y(t - τ) Dg,    y(t_k+) = (1 + b_k) y(t_k),
//! ```
//!
//! together with the explicit oscillation and nonoscillation tests built on the
//! coefficient `P(t) = Π_{t-τ ≤ t_k < t} (1 + b_k) p(t)`.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the usual choice.

// NaN-rejecting `!(a < b)` checks and full-precision quadrature tables are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod criteria;
pub mod expr;
pub mod problem;
pub mod regulated;
pub mod scalar;
pub mod solver;
pub mod stieltjes;
pub mod transform;

pub use criteria::{
    classify_trajectory, iterate_certificate, nonoscillation_criterion, oscillation_criterion,
    Certificate, CriterionReport, SignVerdict, Verdict,
};
pub use expr::{parse, Expr};
pub use problem::{ImpulseSchedule, MeasureDDEProblem, Violation};
pub use regulated::{Domain, Regulated, RegulatedFn};
pub use scalar::Scalar;
pub use solver::{residual, solve, solve_with, SolveOptions, Trajectory};
pub use stieltjes::{alexiewicz_norm, integrate, integrate_dt, Density, Integrator, QuadResult};
pub use transform::{to_impulsive, to_nonimpulsive, NonimpulsiveProblem};

pub type RegulatedFn64 = RegulatedFn<f64>;
pub type RegulatedFn32 = RegulatedFn<f32>;
pub type Integrator64 = Integrator<f64>;
pub type Integrator32 = Integrator<f32>;
pub type Problem64 = MeasureDDEProblem<f64>;
pub type Problem32 = MeasureDDEProblem<f32>;
pub type Schedule64 = ImpulseSchedule<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type CriterionReport64 = CriterionReport<f64>;
pub type Certificate64 = Certificate<f64>;
