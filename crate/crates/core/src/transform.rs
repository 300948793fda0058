//! Removing and restoring impulses.
//!
//! With `Π(t) = Π_{σ ≤ t_k < t} (1 + b_k)`, the map `x = y / Π` takes a
//! solution of the impulsive problem to a continuous solution of
//!
//! ```text
//! Dx = -p(t) Π_{max(σ, t-τ) ≤ t_k < t} (1 + b_k)^{-1} x(t - τ) Dg,
//! ```
//!
//! and `y = Π x` maps back. For `t ≥ σ + τ` the window is the full `[t - τ, t)`.

use thiserror::Error;

use crate::problem::{ImpulseSchedule, MeasureDDEProblem, ScheduleError, WindowWeighted};
use crate::regulated::Regulated;
use crate::scalar::Scalar;
use crate::solver::{
    residual_equation, solve_equation, Equation, SolveError, SolveOptions, Trajectory,
    RESIDUAL_SEED,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("impulse at {at} has b_k = -1; the transform needs 1 + b_k != 0")]
    ForbiddenMagnitude { at: f64 },
    #[error("sigma = {sigma} must be at least t0 = {t0}")]
    Sigma { sigma: f64, t0: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn check_magnitudes<T: Scalar>(
    sched: &ImpulseSchedule<T>,
    lo: T,
    hi: T,
) -> Result<(), TransformError> {
    for (t, b) in sched.impulses_in_closed(lo, hi)? {
        if b == -T::one() {
            return Err(TransformError::ForbiddenMagnitude { at: t.as_f64() });
        }
    }
    Ok(())
}

/// `x(t) = Π_{σ ≤ t_k < t} (1 + b_k)^{-1} y(t)`. The result has no recorded
/// impulses; its right limits at `t_k` match its values up to rounding.
pub fn to_nonimpulsive<T: Scalar>(
    y: &Trajectory<T>,
    sched: &ImpulseSchedule<T>,
    sigma: T,
) -> Result<Trajectory<T>, TransformError> {
    check_magnitudes(sched, sigma, y.horizon())?;
    let n = y.grid().len();
    let mut values = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        let t = y.grid()[i];
        let before = sched.product_factor(sigma, t);
        let through = match sched.b_at(t) {
            Some(b) if t >= sigma => before * (T::one() + b),
            _ => before,
        };
        values.push(y.values()[i] / before);
        right.push(y.right_limits()[i] / through);
    }
    Ok(Trajectory::from_parts(
        y.t0(),
        y.tau(),
        y.grid().to_vec(),
        values,
        right,
        Vec::new(),
        *y.meta(),
    ))
}

/// `y(t) = Π_{σ ≤ t_k < t} (1 + b_k) x(t)`, with `y(t_k+) = (1 + b_k) y(t_k)`
/// at every schedule point on the grid from `σ` on.
pub fn to_impulsive<T: Scalar>(
    x: &Trajectory<T>,
    sched: &ImpulseSchedule<T>,
    sigma: T,
) -> Result<Trajectory<T>, TransformError> {
    check_magnitudes(sched, sigma, x.horizon())?;
    let n = x.grid().len();
    let mut values = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut post_jump = Vec::new();
    for i in 0..n {
        let t = x.grid()[i];
        let before = sched.product_factor(sigma, t);
        let v = before * x.values()[i];
        values.push(v);
        match sched.b_at(t) {
            Some(b) if t >= sigma => {
                let r = (T::one() + b) * v;
                right.push(r);
                post_jump.push((t, r));
            }
            _ => right.push(before * x.right_limits()[i]),
        }
    }
    Ok(Trajectory::from_parts(
        x.t0(),
        x.tau(),
        x.grid().to_vec(),
        values,
        right,
        post_jump,
        *x.meta(),
    ))
}

/// The impulse-free counterpart of a problem, started at `σ ≥ t0`.
#[derive(Debug, Clone)]
pub struct NonimpulsiveProblem<'a, T> {
    prob: &'a MeasureDDEProblem<T>,
    sigma: T,
    none: ImpulseSchedule<T>,
}

impl<'a, T: Scalar> NonimpulsiveProblem<'a, T> {
    pub fn new(prob: &'a MeasureDDEProblem<T>, sigma: T) -> Result<Self, TransformError> {
        if !(sigma >= prob.t0) {
            return Err(TransformError::Sigma {
                sigma: sigma.as_f64(),
                t0: prob.t0.as_f64(),
            });
        }
        Ok(NonimpulsiveProblem {
            prob,
            sigma,
            none: ImpulseSchedule::empty(),
        })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn tau(&self) -> T {
        self.prob.tau
    }

    /// Start of the range where the coefficient uses the full window `[t - τ, t)`.
    pub fn valid_from(&self) -> T {
        self.sigma + self.prob.tau
    }

    /// `p(t) Π_{max(σ, t-τ) ≤ t_k < t} (1 + b_k)^{-1}` on `[σ, ∞)`.
    pub fn coefficient(&self) -> WindowWeighted<'a, T> {
        WindowWeighted {
            p: &self.prob.p,
            sched: &self.prob.impulses,
            tau: self.prob.tau,
            floor: self.sigma,
            inverse: true,
        }
    }

    fn equation<'b>(
        &'b self,
        coef: &'b WindowWeighted<'a, T>,
        history: &'b dyn Regulated<T>,
    ) -> Equation<'b, T> {
        Equation {
            coef,
            g: &self.prob.g,
            tau: self.prob.tau,
            t0: self.sigma,
            phi: history,
            impulses: &self.none,
        }
    }

    /// Solves for `x` with the history `φ` (requires `σ = t0`).
    pub fn solve(&self, horizon: T, opts: &SolveOptions<T>) -> Result<Trajectory<T>, TransformError> {
        if self.sigma != self.prob.t0 {
            return Err(TransformError::Sigma {
                sigma: self.sigma.as_f64(),
                t0: self.prob.t0.as_f64(),
            });
        }
        self.solve_from(&self.prob.phi, horizon, opts)
    }

    /// Solves for `x` on `[σ, horizon]` given `y = x` on `[σ - τ, σ]`.
    pub fn solve_from(
        &self,
        history: &dyn Regulated<T>,
        horizon: T,
        opts: &SolveOptions<T>,
    ) -> Result<Trajectory<T>, TransformError> {
        let v = self.prob.validate();
        if !v.is_empty() {
            return Err(SolveError::Invalid(v).into());
        }
        check_magnitudes(&self.prob.impulses, self.sigma, horizon)?;
        let coef = self.coefficient();
        Ok(solve_equation(&self.equation(&coef, history), horizon, opts)?)
    }

    /// Integral-equation defect of `x` (see [`crate::solver::residual`]).
    pub fn residual(
        &self,
        history: &dyn Regulated<T>,
        x: &Trajectory<T>,
        probes: usize,
    ) -> Result<T, TransformError> {
        let coef = self.coefficient();
        Ok(residual_equation(
            &self.equation(&coef, history),
            x,
            probes,
            RESIDUAL_SEED,
        )?)
    }
}
