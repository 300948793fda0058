//! Explicit oscillation tests on a finite horizon.
//!
//! Both window tests look at `F(t) = ∫_{t-τ}^t P(s) dg(s)` with
//! `P(s) = Π_{s-τ ≤ t_k < s} (1 + b_k) p(s)`:
//! `limsup F > 1` forces every solution to oscillate, and `F ≤ 1/e`
//! (with `g(s) = s`) gives a nonoscillatory solution. Only a finite horizon
//! can be inspected, so verdicts say what was observed there.
//!
//! The certificate iterates `u_{k+1}(t) = P(t) exp(∫_{t-τ}^t u_k)` from
//! `u_1 = P`; a bounded limit is a positive solution of the fixed-point
//! equation and yields a nonoscillatory solution.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::problem::{MeasureDDEProblem, ProblemError, Violation};
use crate::regulated::Regulated;
use crate::scalar::Scalar;
use crate::solver::Trajectory;
use crate::stieltjes::{integrate, probe_points, QuadError, DEFAULT_TOL};

/// Master-grid points per delay in the certificate iteration.
pub const CERT_SAMPLES_PER_DELAY: usize = 512;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriteriaError {
    #[error("invalid problem: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("hypothesis `{name}` violated: {detail}")]
    Hypothesis { name: &'static str, detail: String },
    #[error("bad argument: {0}")]
    Argument(String),
    #[error("window integral at t = {t} failed: {source}")]
    Quad { t: f64, source: QuadError },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

impl From<crate::regulated::FnError> for CriteriaError {
    fn from(e: crate::regulated::FnError) -> Self {
        CriteriaError::Problem(ProblemError::Fn(e))
    }
}

fn hyp(name: &'static str, detail: impl Into<String>) -> CriteriaError {
    CriteriaError::Hypothesis {
        name,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    SatisfiedOnHorizon,
    NotSatisfiedOnHorizon,
    /// Within the margin of the threshold.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CriterionKind {
    /// `sup F > 1`.
    Oscillation,
    /// `sup F ≤ 1/e`.
    Nonoscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport<T> {
    pub kind: CriterionKind,
    /// `(t, F(t))`.
    pub window_values: Vec<(T, T)>,
    pub window_errors: Vec<T>,
    pub sup_observed: T,
    pub sup_at: T,
    pub threshold: T,
    pub margin: T,
    pub verdict: Verdict,
    pub start: T,
    pub horizon: T,
    pub stride: T,
    pub note: String,
}

fn check_common<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    start: T,
    horizon: T,
    stride: T,
) -> Result<(), CriteriaError> {
    let v = prob.validate();
    if !v.is_empty() {
        return Err(CriteriaError::Invalid(v));
    }
    if !(start >= prob.t0 + prob.tau) {
        return Err(hyp(
            "T >= t0 + tau",
            format!("T = {start} but t0 + tau = {}", prob.t0 + prob.tau),
        ));
    }
    if !(horizon >= start) || !horizon.is_finite() {
        return Err(CriteriaError::Argument(format!(
            "horizon {horizon} must be finite and at least T = {start}"
        )));
    }
    if !(stride > T::zero()) {
        return Err(CriteriaError::Argument(format!(
            "stride must be positive, got {stride}"
        )));
    }
    Ok(())
}

fn probe_count<T: Scalar>(a: T, b: T, tau: T) -> usize {
    let steps = ((b - a) / tau).ceil().to_usize().unwrap_or(1).max(1);
    (steps * 64).clamp(64, 1 << 16)
}

/// `p > 0` (times the density when `with_density`) at probe midpoints of `[a, b]`.
fn check_positive<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    a: T,
    b: T,
    with_density: bool,
) -> Result<(), CriteriaError> {
    for s in probe_points(a, b, probe_count(a, b, prob.tau)) {
        let mut v = prob.p.value_at(s)?;
        if with_density {
            v = v * prob.g.density_at(s)?;
        }
        if !(v > T::zero()) {
            let name = if with_density { "p dg > 0" } else { "p > 0" };
            return Err(hyp(name, format!("value {v} at s = {s}")));
        }
    }
    Ok(())
}

fn check_oscillation_hypotheses<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    a: T,
    b: T,
) -> Result<(), CriteriaError> {
    if !prob.g.is_nondecreasing_on(a, b, probe_count(a, b, prob.tau))? {
        return Err(hyp(
            "g nondecreasing",
            format!("g decreases somewhere in [{a}, {b}]"),
        ));
    }
    check_positive(prob, a, b, true)?;
    for (s, d) in prob.g.jumps_in(a, b) {
        if *d > T::zero() && !(prob.p.value_at(*s)? > T::zero()) {
            return Err(hyp(
                "p dg > 0",
                format!("p({s}) <= 0 at a jump of g"),
            ));
        }
    }
    Ok(())
}

fn check_identity_hypotheses<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    a: T,
    b: T,
) -> Result<(), CriteriaError> {
    if !prob.g.is_identity() {
        return Err(hyp("g identity", "this test is stated for g(s) = s"));
    }
    if !prob.impulses.all_above_minus_one(prob.t0, b) {
        return Err(hyp("b_k > -1", format!("some impulse in (t0, {b}] has b_k <= -1")));
    }
    check_positive(prob, a, b, false)
}

fn eval_points<T: Scalar>(start: T, horizon: T, stride: T) -> Vec<T> {
    let n = ((horizon - start) / stride + T::lit(1e-9))
        .floor()
        .to_usize()
        .unwrap_or(0);
    let mut pts: Vec<T> = (0..=n)
        .map(|i| start + stride * T::from_usize(i).unwrap())
        .filter(|t| *t <= horizon)
        .collect();
    if pts.last().is_none_or(|l| *l < horizon) {
        pts.push(horizon);
    }
    pts
}

/// `F(t)` and its error estimate at each point, in order.
fn window_values<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    points: &[T],
) -> Result<Vec<(T, T, T)>, CriteriaError> {
    let coef = prob.aux_coefficient();
    points
        .par_iter()
        .map(|&t| {
            let r = integrate(&coef, &prob.g, t - prob.tau, t, T::lit(DEFAULT_TOL))
                .and_then(|r| r.ensure_converged())
                .map_err(|source| CriteriaError::Quad {
                    t: t.as_f64(),
                    source,
                })?;
            Ok((t, r.value, r.error_estimate))
        })
        .collect()
}

fn build_report<T: Scalar>(
    kind: CriterionKind,
    vals: Vec<(T, T, T)>,
    start: T,
    horizon: T,
    stride: T,
) -> CriterionReport<T> {
    let threshold = match kind {
        CriterionKind::Oscillation => T::one(),
        CriterionKind::Nonoscillation => T::one() / T::E(),
    };
    let (mut sup, mut sup_at) = (T::neg_infinity(), start);
    let mut max_err = T::zero();
    for (t, f, e) in &vals {
        if *f > sup {
            sup = *f;
            sup_at = *t;
        }
        max_err = max_err.max(*e);
    }
    let margin = max_err + T::lit(16.0) * T::epsilon() * threshold.max(T::one());
    let verdict = match kind {
        CriterionKind::Oscillation => {
            if sup > threshold + margin {
                Verdict::SatisfiedOnHorizon
            } else if sup < threshold - margin {
                Verdict::NotSatisfiedOnHorizon
            } else {
                Verdict::Boundary
            }
        }
        CriterionKind::Nonoscillation => {
            if sup <= threshold - margin {
                Verdict::SatisfiedOnHorizon
            } else if sup > threshold + margin {
                Verdict::NotSatisfiedOnHorizon
            } else {
                Verdict::Boundary
            }
        }
    };
    let note = match (kind, verdict) {
        (CriterionKind::Oscillation, Verdict::SatisfiedOnHorizon) => format!(
            "sup F > 1 observed on [{start}, {horizon}]; all solutions oscillate provided the excess persists as t grows"
        ),
        (CriterionKind::Nonoscillation, Verdict::SatisfiedOnHorizon) => format!(
            "F <= 1/e on [{start}, {horizon}]; a nonoscillatory solution exists provided the bound holds beyond the horizon"
        ),
        (_, Verdict::Boundary) => "observed supremum within the error margin of the threshold".into(),
        _ => format!("threshold not met on [{start}, {horizon}]"),
    };
    CriterionReport {
        kind,
        window_values: vals.iter().map(|(t, f, _)| (*t, *f)).collect(),
        window_errors: vals.iter().map(|(_, _, e)| *e).collect(),
        sup_observed: sup,
        sup_at,
        threshold,
        margin,
        verdict,
        start,
        horizon,
        stride,
        note,
    }
}

/// Evaluates `F` at `T, T + stride, …, horizon` against the threshold 1.
pub fn oscillation_criterion<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    start: T,
    horizon: T,
    stride: T,
) -> Result<CriterionReport<T>, CriteriaError> {
    check_common(prob, start, horizon, stride)?;
    check_oscillation_hypotheses(prob, start - prob.tau, horizon)?;
    let vals = window_values(prob, &eval_points(start, horizon, stride))?;
    Ok(build_report(CriterionKind::Oscillation, vals, start, horizon, stride))
}

/// Evaluates `F` (with `g(s) = s`) against the threshold `1/e`.
pub fn nonoscillation_criterion<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    start: T,
    horizon: T,
    stride: T,
) -> Result<CriterionReport<T>, CriteriaError> {
    check_common(prob, start, horizon, stride)?;
    check_identity_hypotheses(prob, start - prob.tau, horizon)?;
    let vals = window_values(prob, &eval_points(start, horizon, stride))?;
    Ok(build_report(CriterionKind::Nonoscillation, vals, start, horizon, stride))
}

/// One iterate `u_k` on the master grid from index `start` on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Iterate<T> {
    pub start: usize,
    pub from: T,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate<T> {
    /// Master grid `T + i τ/512`.
    pub grid: Vec<T>,
    pub iterates: Vec<Iterate<T>>,
    pub iterations: usize,
    pub converged: bool,
    /// Overflow or non-finite values during the iteration.
    pub diverged: bool,
    /// `sup (u_{k+1} - u_k)` over the last common domain.
    pub sup_gap: T,
    pub gaps: Vec<T>,
    /// Start of the last iterate's domain.
    pub valid_from: T,
    /// `sup |u - P exp(∫ u)|` on `[valid_from + τ, horizon]`, the inner
    /// integral by composite Simpson. `None` when that tail is empty.
    pub residual: Option<T>,
    /// `u_k ≤ u_{k+1}` held everywhere (relative slack `1e-12`).
    pub monotone: bool,
    /// `u_k ≤ e P` held everywhere.
    pub within_bound: bool,
    pub tol: T,
    pub message: String,
}

/// `∫_{t_j}^{t_i} u` by trapezoid with Euler–Maclaurin end corrections, on a
/// uniform grid. `prefix` holds the plain trapezoid sums.
fn corrected_integral<T: Scalar>(u: &[T], prefix: &[T], h: T, j: usize, i: usize) -> T {
    let n = u.len();
    let two = T::lit(2.0);
    let deriv = |k: usize| -> T {
        if k == 0 {
            (T::lit(-3.0) * u[0] + T::lit(4.0) * u[1] - u[2]) / (two * h)
        } else if k == n - 1 {
            (T::lit(3.0) * u[k] - T::lit(4.0) * u[k - 1] + u[k - 2]) / (two * h)
        } else {
            (u[k + 1] - u[k - 1]) / (two * h)
        }
    };
    let trap = prefix[i] - prefix[j];
    if n < 3 {
        return trap;
    }
    trap - h * h / T::lit(12.0) * (deriv(i) - deriv(j))
}

fn simpson<T: Scalar>(u: &[T], h: T) -> T {
    // u.len() - 1 even.
    let m = u.len() - 1;
    let mut s = u[0] + u[m];
    for (k, v) in u.iter().enumerate().take(m).skip(1) {
        s = s + *v * if k % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
    }
    s * h / T::lit(3.0)
}

/// Runs the iteration `u_{k+1} = P exp(∫_{t-τ}^t u_k)` on shrinking domains
/// `[T + (k-1)τ, horizon]`.
pub fn iterate_certificate<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    start: T,
    horizon: T,
    kmax: usize,
    tol: T,
) -> Result<Certificate<T>, CriteriaError> {
    check_common(prob, start, horizon, prob.tau)?;
    if kmax == 0 {
        return Err(CriteriaError::Argument("kmax must be positive".into()));
    }
    if !(tol > T::zero()) {
        return Err(CriteriaError::Argument(format!("tol must be positive, got {tol}")));
    }
    check_identity_hypotheses(prob, start - prob.tau, horizon)?;

    let steps = CERT_SAMPLES_PER_DELAY;
    let h = prob.tau / T::from_usize(steps).unwrap();
    let n = ((horizon - start) / h + T::lit(1e-9))
        .floor()
        .to_usize()
        .unwrap_or(0)
        + 1;
    let grid: Vec<T> = (0..n).map(|i| start + h * T::from_usize(i).unwrap()).collect();
    let p: Vec<T> = grid
        .par_iter()
        .map(|t| prob.aux_p(*t))
        .collect::<Result<_, _>>()?;
    let e = T::E();
    let slack = |x: T| T::lit(1e-12) * x.abs().max(T::min_positive_value());

    let mut iterates = vec![Iterate {
        start: 0,
        from: start,
        values: p.clone(),
    }];
    let mut gaps = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut monotone = true;
    let mut within_bound = true;
    let mut message = String::new();

    while iterates.len() < kmax {
        let cur = iterates.last().unwrap();
        let next_start = cur.start + steps;
        if next_start >= n {
            message = format!(
                "domain exhausted after {} iterates: [{}, {horizon}] is shorter than tau",
                iterates.len(),
                grid[cur.start]
            );
            break;
        }
        let u = &cur.values;
        let mut prefix = Vec::with_capacity(u.len());
        prefix.push(T::zero());
        for k in 1..u.len() {
            prefix.push(prefix[k - 1] + (u[k - 1] + u[k]) * h / T::lit(2.0));
        }
        let off = cur.start;
        let next: Vec<T> = (next_start..n)
            .into_par_iter()
            .map(|i| {
                let li = i - off;
                p[i] * corrected_integral(u, &prefix, h, li - steps, li).exp()
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            message = format!(
                "iterate {} overflowed: the iteration diverges",
                iterates.len() + 1
            );
            iterates.push(Iterate {
                start: next_start,
                from: grid[next_start],
                values: next,
            });
            break;
        }
        let mut gap = T::zero();
        for (k, v) in next.iter().enumerate() {
            let old = u[next_start - off + k];
            gap = gap.max((*v - old).abs());
            if *v < old - slack(old) {
                monotone = false;
            }
            if *v > e * p[next_start + k] + slack(*v) {
                within_bound = false;
            }
        }
        gaps.push(gap);
        iterates.push(Iterate {
            start: next_start,
            from: grid[next_start],
            values: next,
        });
        if gap <= tol {
            converged = true;
            message = format!("converged after {} iterates", iterates.len());
            break;
        }
    }
    if message.is_empty() {
        message = format!("kmax = {kmax} reached without convergence");
    }

    let last = iterates.last().unwrap();
    let residual = if diverged || last.start + steps >= n {
        None
    } else {
        let u = &last.values;
        let worst = (last.start + steps..n)
            .into_par_iter()
            .map(|i| {
                let li = i - last.start;
                let s = simpson(&u[li - steps..=li], h);
                (u[li] - p[i] * s.exp()).abs()
            })
            .reduce(|| T::zero(), |a, b| a.max(b));
        Some(worst)
    };

    Ok(Certificate {
        valid_from: last.from,
        iterations: iterates.len(),
        sup_gap: gaps.last().copied().unwrap_or(T::infinity()),
        grid,
        iterates,
        converged,
        diverged,
        gaps,
        residual,
        monotone,
        within_bound,
        tol,
        message,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignVerdict {
    EventuallyPositive,
    EventuallyNegative,
    /// Both signs occur in the tail.
    OscillatoryOnHorizon,
    /// The tail is zero to within the tolerance.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification<T> {
    pub verdict: SignVerdict,
    pub tail_start: T,
    pub horizon: T,
    pub zero_tol: T,
    pub min: T,
    pub max: T,
    pub samples: usize,
}

/// Sign pattern of the final `tail_fraction` of the samples after `t0`,
/// right limits at impulses included. Samples within `zero_tol` of zero are
/// ignored (default `1e-9` times the largest tail magnitude).
pub fn classify_trajectory<T: Scalar>(
    traj: &Trajectory<T>,
    tail_fraction: T,
    zero_tol: Option<T>,
) -> Result<Classification<T>, CriteriaError> {
    if !(tail_fraction > T::zero() && tail_fraction < T::one()) {
        return Err(CriteriaError::Argument(format!(
            "tail_fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let first = traj.grid().partition_point(|t| *t < traj.t0());
    let count = traj.grid().len() - first;
    let take = (tail_fraction * T::from_usize(count).unwrap())
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .clamp(1, count.max(1));
    let lo = traj.grid().len() - take;
    let tail_start = traj.grid()[lo];
    let mut samples: Vec<T> = traj.values()[lo..].to_vec();
    samples.extend(
        traj.post_jump()
            .iter()
            .filter(|(t, _)| *t >= tail_start)
            .map(|(_, v)| *v),
    );
    let max_abs = samples.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let zero_tol = zero_tol.unwrap_or(T::lit(1e-9) * max_abs);
    let min = samples.iter().fold(T::infinity(), |m, v| m.min(*v));
    let max = samples.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let pos = samples.iter().any(|v| *v > zero_tol);
    let neg = samples.iter().any(|v| *v < -zero_tol);
    let verdict = match (pos, neg) {
        (true, true) => SignVerdict::OscillatoryOnHorizon,
        (true, false) => SignVerdict::EventuallyPositive,
        (false, true) => SignVerdict::EventuallyNegative,
        (false, false) => SignVerdict::Indeterminate,
    };
    Ok(Classification {
        verdict,
        tail_start,
        horizon: traj.horizon(),
        zero_tol,
        min,
        max,
        samples: samples.len(),
    })
}
