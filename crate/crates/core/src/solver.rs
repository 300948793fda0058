//! Method of steps for the integral form of the impulsive problem,
//!
//! ```text
//! y(s2) - y(s1) = -∫_{s1}^{s2} p(s) y(s - τ) dg(s) + Σ_{s1 ≤ t_k < s2} b_k y(t_k),
//! ```
//!
//! with `y` left-continuous and piecewise linear between grid nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::problem::{ImpulseSchedule, MeasureDDEProblem, ScheduleError, Violation};
use crate::regulated::{check_interval, Domain, FnError, Regulated};
use crate::scalar::{cmp_total, sort_dedup, Scalar};
use crate::stieltjes::{integrate, Integrator, QuadError, DEFAULT_TOL};

pub const DEFAULT_SAMPLES_PER_STEP: usize = 512;
/// Seed used by [`residual`] for its random probe pairs.
pub const RESIDUAL_SEED: u64 = 0x6d64_6465;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid problem: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("horizon {horizon} must exceed t0 = {t0}")]
    Horizon { horizon: f64, t0: f64 },
    #[error("samples_per_step must be positive")]
    Samples,
    #[error("quadrature failed on [{a}, {b}]: {source}")]
    Quad { a: f64, b: f64, source: QuadError },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Fn(#[from] FnError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    pub samples_per_step: usize,
    /// Quadrature tolerance per delay step.
    pub quad_tol: T,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            samples_per_step: DEFAULT_SAMPLES_PER_STEP,
            quad_tol: T::lit(DEFAULT_TOL),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveMeta<T> {
    pub samples_per_step: usize,
    pub quad_tol: T,
    /// Sum of per-panel quadrature error estimates.
    pub quad_error: T,
    /// Largest estimated linear-interpolation error between nodes.
    pub interpolation_bound: T,
    /// Propagated bound on `|y - y_exact|` at the nodes plus the interpolation bound.
    pub tolerance: T,
    pub panels: usize,
}

impl<T: Scalar> SolveMeta<T> {
    fn blank() -> Self {
        SolveMeta {
            samples_per_step: 0,
            quad_tol: T::lit(DEFAULT_TOL),
            quad_error: T::zero(),
            interpolation_bound: T::zero(),
            tolerance: T::zero(),
            panels: 0,
        }
    }
}

/// Sampled left-continuous solution on `[t0 - τ, horizon]`.
///
/// Between consecutive nodes `y` is linear from the right limit at the left
/// node to the value at the right node.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Trajectory<T> {
    t0: T,
    tau: T,
    grid: Vec<T>,
    values: Vec<T>,
    right: Vec<T>,
    post_jump: Vec<(T, T)>,
    meta: SolveMeta<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// Trajectory from samples; right limits follow the impulse rule at every
    /// schedule point on the grid and equal the values elsewhere.
    pub fn from_samples(
        t0: T,
        tau: T,
        grid: Vec<T>,
        values: Vec<T>,
        sched: &ImpulseSchedule<T>,
    ) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per grid point");
        assert!(!grid.is_empty(), "empty grid");
        let mut right = values.clone();
        let mut post_jump = Vec::new();
        for (i, t) in grid.iter().enumerate() {
            if *t > t0 {
                if let Some(b) = sched.b_at(*t) {
                    right[i] = (T::one() + b) * values[i];
                    post_jump.push((*t, right[i]));
                }
            }
        }
        Trajectory {
            t0,
            tau,
            grid,
            values,
            right,
            post_jump,
            meta: SolveMeta::blank(),
        }
    }

    pub(crate) fn from_parts(
        t0: T,
        tau: T,
        grid: Vec<T>,
        values: Vec<T>,
        right: Vec<T>,
        post_jump: Vec<(T, T)>,
        meta: SolveMeta<T>,
    ) -> Self {
        Trajectory {
            t0,
            tau,
            grid,
            values,
            right,
            post_jump,
            meta,
        }
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn horizon(&self) -> T {
        *self.grid.last().unwrap()
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    /// `y` at each node (left value at impulse points).
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `y(t+)` at each node.
    pub fn right_limits(&self) -> &[T] {
        &self.right
    }

    /// `(t_k, y(t_k+))` for every impulse on the grid after `t0`.
    pub fn post_jump(&self) -> &[(T, T)] {
        &self.post_jump
    }

    pub fn post_jump_at(&self, t: T) -> Option<T> {
        self.post_jump.iter().find(|(s, _)| *s == t).map(|(_, v)| *v)
    }

    pub fn meta(&self) -> &SolveMeta<T> {
        &self.meta
    }

    /// Index of the node at exactly `t`.
    pub fn node_index(&self, t: T) -> Option<usize> {
        self.grid.binary_search_by(|x| cmp_total(x, &t)).ok()
    }

    /// Shifts sample `i` and its right limit by `delta`.
    pub fn perturb(&mut self, i: usize, delta: T) {
        self.values[i] = self.values[i] + delta;
        self.right[i] = self.right[i] + delta;
        let t = self.grid[i];
        for (s, v) in &mut self.post_jump {
            if *s == t {
                *v = self.right[i];
            }
        }
    }

    /// `α · y`.
    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut().chain(out.right.iter_mut()) {
            *v = *v * alpha;
        }
        for (_, v) in &mut out.post_jump {
            *v = *v * alpha;
        }
        out
    }
}

/// Linear interpolation on a node list starting at `grid[0]`.
fn interp<T: Scalar>(grid: &[T], values: &[T], right: &[T], t: T) -> T {
    let n = grid.len();
    if t <= grid[0] {
        return values[0];
    }
    let i = grid.partition_point(|x| *x < t).min(n - 1);
    if grid[i] == t {
        return values[i];
    }
    let (a, b) = (grid[i - 1], grid[i]);
    let w = (t - a) / (b - a);
    right[i - 1] + (values[i] - right[i - 1]) * w
}

fn interp_right<T: Scalar>(grid: &[T], values: &[T], right: &[T], t: T) -> T {
    match grid.binary_search_by(|x| cmp_total(x, &t)) {
        Ok(i) => right[i],
        Err(_) => interp(grid, values, right, t),
    }
}

impl<T: Scalar> Regulated<T> for Trajectory<T> {
    fn domain(&self) -> Domain<T> {
        Domain::new(self.grid[0], Some(self.horizon()))
    }

    fn value_at(&self, t: T) -> Result<T, FnError> {
        self.domain().check(t)?;
        Ok(interp(&self.grid, &self.values, &self.right, t))
    }

    fn right_limit(&self, t: T) -> Result<T, FnError> {
        self.domain().check(t)?;
        Ok(interp_right(&self.grid, &self.values, &self.right, t))
    }

    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        check_interval(a, b)?;
        let lo = self.grid.partition_point(|x| *x < a);
        let hi = self.grid.partition_point(|x| *x <= b);
        Ok(self.grid[lo..hi].to_vec())
    }
}

/// Linear delay equation `Dy = -c(t) y(t - τ) Dg` with impulses, borrowed from
/// either the impulsive problem or its impulse-free counterpart.
#[derive(Clone, Copy)]
pub(crate) struct Equation<'a, T> {
    pub coef: &'a dyn Regulated<T>,
    pub g: &'a Integrator<T>,
    pub tau: T,
    pub t0: T,
    pub phi: &'a dyn Regulated<T>,
    pub impulses: &'a ImpulseSchedule<T>,
}

impl<'a, T: Scalar> Equation<'a, T> {
    pub(crate) fn of(prob: &'a MeasureDDEProblem<T>) -> Self {
        Equation {
            coef: &prob.p,
            g: &prob.g,
            tau: prob.tau,
            t0: prob.t0,
            phi: &prob.phi,
            impulses: &prob.impulses,
        }
    }
}

/// `y` on `[t0 - τ, last node]`: the exact history up to `t0`, interpolated
/// samples after it.
#[derive(Clone, Copy)]
struct History<'a, T> {
    phi: &'a dyn Regulated<T>,
    t0: T,
    grid: &'a [T],
    values: &'a [T],
    right: &'a [T],
}

impl<T: Scalar> History<'_, T> {
    fn value(&self, u: T) -> Result<T, FnError> {
        if u <= self.t0 {
            self.phi.value_at(u)
        } else {
            Ok(interp(self.grid, self.values, self.right, u))
        }
    }

    fn right(&self, u: T) -> Result<T, FnError> {
        if u < self.t0 {
            self.phi.right_limit(u)
        } else {
            Ok(interp_right(self.grid, self.values, self.right, u))
        }
    }
}

/// `s ↦ c(s) y(s - τ)`.
struct Delayed<'a, T> {
    coef: &'a dyn Regulated<T>,
    hist: History<'a, T>,
    tau: T,
}

impl<T: Scalar> Regulated<T> for Delayed<'_, T> {
    fn domain(&self) -> Domain<T> {
        let last = *self.hist.grid.last().unwrap();
        Domain::new(
            self.coef.domain().start.max(self.hist.t0),
            Some(last + self.tau),
        )
    }

    fn value_at(&self, s: T) -> Result<T, FnError> {
        self.domain().check(s)?;
        Ok(self.coef.value_at(s)? * self.hist.value(s - self.tau)?)
    }

    fn right_limit(&self, s: T) -> Result<T, FnError> {
        self.domain().check(s)?;
        Ok(self.coef.right_limit(s)? * self.hist.right(s - self.tau)?)
    }

    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        let mut out = self.coef.breakpoints_in(a, b)?;
        let (ua, ub) = (a - self.tau, b - self.tau);
        let hist_start = self.hist.t0 - self.tau;
        if ua < self.hist.t0 {
            let lo = ua.max(hist_start);
            let hi = ub.min(self.hist.t0);
            if lo <= hi {
                out.extend(self.hist.phi.breakpoints_in(lo, hi)?.into_iter().map(|u| u + self.tau));
            }
        }
        let g = self.hist.grid;
        let lo = g.partition_point(|x| *x < ua);
        let hi = g.partition_point(|x| *x <= ub);
        out.extend(g[lo..hi].iter().map(|u| *u + self.tau));
        out.retain(|s| *s >= a && *s <= b);
        sort_dedup(&mut out);
        Ok(out)
    }
}

/// Solves with default options (`quad_tol = 1e-10` per delay step).
pub fn solve<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    horizon: T,
    samples_per_step: usize,
) -> Result<Trajectory<T>, SolveError> {
    solve_with(
        prob,
        horizon,
        &SolveOptions {
            samples_per_step,
            ..SolveOptions::default()
        },
    )
}

pub fn solve_with<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    horizon: T,
    opts: &SolveOptions<T>,
) -> Result<Trajectory<T>, SolveError> {
    let violations = prob.validate();
    if !violations.is_empty() {
        return Err(SolveError::Invalid(violations));
    }
    solve_equation(&Equation::of(prob), horizon, opts)
}

/// Uniform nodes `start + i h` up to `end`, merged with `extras`; an extra
/// within `1e-9 h` of a uniform node replaces it. Returns nodes and a flag
/// marking the extras.
fn merge_grid<T: Scalar>(start: T, end: T, h: T, extras: &[T]) -> (Vec<T>, Vec<bool>) {
    let steps = (end - start) / h;
    let mut m = steps.round();
    if (steps - m).abs() > T::lit(1e-9) {
        m = steps.ceil();
    }
    let m = m.to_usize().unwrap_or(1).max(1);
    // Priority: 2 for pinned ends and extras, 1 for uniform nodes.
    let mut pts: Vec<(T, u8)> = (0..m)
        .map(|i| (start + h * T::from_usize(i).unwrap(), 1u8))
        .collect();
    pts[0].1 = 3;
    pts.push((end, 2));
    pts.extend(
        extras
            .iter()
            .filter(|e| **e > start && **e <= end)
            .map(|e| (*e, 2u8)),
    );
    pts.sort_by(|a, b| cmp_total(&a.0, &b.0).then(b.1.cmp(&a.1)));
    let snap = h * T::lit(1e-9);
    let mut out: Vec<(T, u8)> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last_mut() {
            Some(last) if p.0 - last.0 <= snap => {
                if p.1 > last.1 {
                    *last = p;
                }
            }
            _ => out.push(p),
        }
    }
    if out.len() == 1 {
        out.push((end, 2));
    }
    let flags = out.iter().map(|p| p.1 >= 2).collect();
    (out.into_iter().map(|p| p.0).collect(), flags)
}

/// Interpolation error estimate on the interval after node `j`, from the
/// slope change with its neighbours; intervals touching an extra node are
/// compared only across smooth nodes.
fn curvature_bound<T: Scalar>(
    grid: &[T],
    values: &[T],
    right: &[T],
    extra: &[bool],
    j: usize,
) -> T {
    let n = values.len();
    if j + 1 >= n {
        return T::zero();
    }
    let slope = |k: usize| (values[k + 1] - right[k]) / (grid[k + 1] - grid[k]);
    let h = grid[j + 1] - grid[j];
    let s = slope(j);
    let mut worst = T::zero();
    if j >= 1 && !extra[j] {
        let hp = grid[j] - grid[j - 1];
        worst = worst.max((s - slope(j - 1)).abs() / ((h + hp) / T::lit(2.0)));
    }
    if j + 2 < n && !extra[j + 1] {
        let hn = grid[j + 2] - grid[j + 1];
        worst = worst.max((slope(j + 1) - s).abs() / ((h + hn) / T::lit(2.0)));
    }
    worst * h * h / T::lit(8.0)
}

pub(crate) fn solve_equation<T: Scalar>(
    eq: &Equation<'_, T>,
    horizon: T,
    opts: &SolveOptions<T>,
) -> Result<Trajectory<T>, SolveError> {
    if !(horizon > eq.t0) || !horizon.is_finite() {
        return Err(SolveError::Horizon {
            horizon: horizon.as_f64(),
            t0: eq.t0.as_f64(),
        });
    }
    if opts.samples_per_step == 0 {
        return Err(SolveError::Samples);
    }
    let (t0, tau) = (eq.t0, eq.tau);
    let n_step = T::from_usize(opts.samples_per_step).unwrap();
    let h = tau / n_step;

    // History nodes on [t0 - τ, t0).
    let hist_extra = eq.phi.breakpoints_in(t0 - tau, t0)?;
    let (hist_grid, _) = merge_grid(t0 - tau, t0, h, &hist_extra);
    let mut grid: Vec<T> = Vec::new();
    let mut values: Vec<T> = Vec::new();
    let mut right: Vec<T> = Vec::new();
    for &t in &hist_grid[..hist_grid.len() - 1] {
        grid.push(t);
        values.push(eq.phi.value_at(t)?);
        right.push(eq.phi.right_limit(t)?);
    }

    // Solution nodes on [t0, horizon].
    let impulses = eq.impulses.impulses_in_closed(t0, horizon)?;
    let mut extras: Vec<T> = Vec::new();
    for (t, _) in &impulses {
        extras.push(*t);
        extras.push(*t + tau);
    }
    extras.extend(eq.coef.breakpoints_in(t0, horizon)?);
    extras.extend(eq.g.density_breakpoints_in(t0, horizon)?);
    for (s, _) in eq.g.jumps_in(t0, horizon) {
        extras.push(*s);
        extras.push(*s + tau);
    }
    extras.extend(hist_extra.iter().map(|u| *u + tau));
    extras.push(t0 + tau);
    sort_dedup(&mut extras);
    let (nodes, extra_flag) = merge_grid(t0, horizon, h, &extras);

    let mut imp_b: Vec<Option<T>> = vec![None; nodes.len()];
    {
        let mut k = 0;
        for (i, t) in nodes.iter().enumerate() {
            while k < impulses.len() && impulses[k].0 < *t {
                k += 1;
            }
            if k < impulses.len() && impulses[k].0 == *t {
                imp_b[i] = Some(impulses[k].1);
            }
        }
    }

    let mut sv: Vec<T> = Vec::with_capacity(nodes.len());
    let mut sr: Vec<T> = Vec::with_capacity(nodes.len());
    let mut err: Vec<T> = Vec::with_capacity(nodes.len());
    sv.push(eq.phi.value_at(t0)?);
    err.push(T::zero());
    let mut quad_error = T::zero();
    let mut panels = 0usize;

    // Right limit at node i. Needs the samples before i only.
    let right_of = |i: usize, sv: &[T], sr: &[T]| -> Result<T, SolveError> {
        let t = nodes[i];
        let y = sv[i];
        if let Some(b) = imp_b[i] {
            return Ok((T::one() + b) * y);
        }
        if let Some(d) = eq.g.jump_at(t) {
            let u = t - tau;
            let k = sr.len();
            let hv = if u <= t0 {
                eq.phi.value_at(u)?
            } else {
                interp(&nodes[..k], &sv[..k], sr, u)
            };
            return Ok(y - eq.coef.value_at(t)? * hv * d);
        }
        Ok(y)
    };

    for i in 1..nodes.len() {
        let (a, b) = (nodes[i - 1], nodes[i]);
        let r = right_of(i - 1, &sv, &sr)?;
        sr.push(r);
        let hist = History {
            phi: eq.phi,
            t0,
            grid: &nodes[..i],
            values: &sv[..i],
            right: &sr[..i],
        };
        let integrand = Delayed {
            coef: eq.coef,
            hist,
            tau,
        };
        let panel_tol = (opts.quad_tol * (b - a) / tau).max(T::min_positive_value());
        let q = integrate(&integrand, eq.g, a, b, panel_tol)
            .and_then(|q| q.ensure_converged())
            .map_err(|source| SolveError::Quad {
                a: a.as_f64(),
                b: b.as_f64(),
                source,
            })?;
        // The panel integral over [a, b) already contains a g-jump at a.
        let base = if imp_b[i - 1].is_some() { r } else { sv[i - 1] };
        let y = base - q.value;
        sv.push(y);
        quad_error = quad_error + q.error_estimate;
        panels += q.panels_used;

        // Error propagation: carried error, this panel's quadrature error,
        // and history error weighted by ∫ |c| |dg| over the panel.
        let mid = (a + b) / T::lit(2.0);
        let mut weight = (eq.coef.value_at(mid)? * eq.g.density_at(mid)?).abs() * (b - a);
        if let Some(d) = eq.g.jump_at(a) {
            weight = weight + (eq.coef.value_at(a)? * d).abs();
        }
        let hist_err = {
            let u = b - tau;
            if u <= t0 {
                T::zero()
            } else {
                let j = nodes[..i].partition_point(|x| *x < u).min(i - 1);
                let j0 = j.saturating_sub(1);
                err[j0].max(err[j])
                    + curvature_bound(&nodes[..i], &sv[..i], &sr[..i], &extra_flag, j0)
            }
        };
        let carried = match imp_b[i - 1] {
            Some(bk) => err[i - 1] * (T::one() + bk).abs(),
            None => err[i - 1],
        };
        err.push(carried + q.error_estimate + weight * hist_err);
    }
    let last = nodes.len() - 1;
    let r = right_of(last, &sv, &sr)?;
    sr.push(r);

    let mut interp_bound = T::zero();
    for j in 0..last {
        interp_bound = interp_bound.max(curvature_bound(&nodes, &sv, &sr, &extra_flag, j));
    }
    let max_err = err.iter().fold(T::zero(), |m, e| m.max(*e));

    let mut post_jump = Vec::new();
    for (i, t) in nodes.iter().enumerate() {
        if imp_b[i].is_some() {
            post_jump.push((*t, sr[i]));
        }
    }
    grid.extend_from_slice(&nodes);
    values.extend_from_slice(&sv);
    right.extend_from_slice(&sr);
    Ok(Trajectory {
        t0,
        tau,
        grid,
        values,
        right,
        post_jump,
        meta: SolveMeta {
            samples_per_step: opts.samples_per_step,
            quad_tol: opts.quad_tol,
            quad_error,
            interpolation_bound: interp_bound,
            tolerance: max_err + interp_bound,
            panels,
        },
    })
}

/// Largest defect of the integral equation over `probes` seeded random pairs
/// in `[t0, horizon]` and over every pair of consecutive nodes.
pub fn residual<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    traj: &Trajectory<T>,
    probes: usize,
) -> Result<T, SolveError> {
    residual_seeded(prob, traj, probes, RESIDUAL_SEED)
}

pub fn residual_seeded<T: Scalar>(
    prob: &MeasureDDEProblem<T>,
    traj: &Trajectory<T>,
    probes: usize,
    seed: u64,
) -> Result<T, SolveError> {
    residual_equation(&Equation::of(prob), traj, probes, seed)
}

pub(crate) fn residual_equation<T: Scalar>(
    eq: &Equation<'_, T>,
    traj: &Trajectory<T>,
    probes: usize,
    seed: u64,
) -> Result<T, SolveError> {
    let t0 = eq.t0;
    let start = traj.grid.partition_point(|x| *x < t0);
    if start >= traj.grid.len() || traj.grid[start] != t0 {
        return Err(SolveError::Fn(FnError::OutOfDomain {
            t: t0.as_f64(),
            domain: "trajectory grid (t0 must be a node)".into(),
        }));
    }
    let nodes = &traj.grid[start..];
    let hist = History {
        phi: eq.phi,
        t0,
        grid: nodes,
        values: &traj.values[start..],
        right: &traj.right[start..],
    };
    let integrand = Delayed {
        coef: eq.coef,
        hist,
        tau: eq.tau,
    };
    let horizon = traj.horizon();
    let quad_tol = traj.meta.quad_tol.max(T::epsilon());
    let panel = |a: T, b: T| -> Result<T, SolveError> {
        let tol = (quad_tol * (b - a) / eq.tau).max(T::min_positive_value());
        integrate(&integrand, eq.g, a, b, tol)
            .and_then(|q| q.ensure_converged())
            .map(|q| q.value)
            .map_err(|source| SolveError::Quad {
                a: a.as_f64(),
                b: b.as_f64(),
                source,
            })
    };
    let y = |s: T| interp(nodes, hist.values, hist.right, s);
    let defect = |s1: T, s2: T, integral: T| -> Result<T, SolveError> {
        let jumps: T = eq
            .impulses
            .impulses_in(s1, s2)?
            .into_iter()
            .map(|(t, b)| b * y(t))
            .sum();
        Ok((y(s2) - y(s1) + integral - jumps).abs())
    };

    // Per-panel integrals and node defects.
    let cells: Vec<T> = (1..nodes.len())
        .into_par_iter()
        .map(|i| panel(nodes[i - 1], nodes[i]))
        .collect::<Result<_, _>>()?;
    let mut worst = T::zero();
    let mut prefix = Vec::with_capacity(nodes.len());
    prefix.push(T::zero());
    for (i, c) in cells.iter().enumerate() {
        worst = worst.max(defect(nodes[i], nodes[i + 1], *c)?);
        prefix.push(prefix[i] + *c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (horizon - t0).as_f64();
    let pairs: Vec<(T, T)> = (0..probes)
        .map(|_| {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            let (a, b) = if u <= v { (u, v) } else { (v, u) };
            (
                (t0 + T::lit(a * span)).min(horizon),
                (t0 + T::lit(b * span)).min(horizon),
            )
        })
        .collect();
    let pair_defects: Vec<T> = pairs
        .par_iter()
        .map(|&(s1, s2)| {
            if s1 == s2 {
                return Ok(T::zero());
            }
            // Node at or before s: index j with nodes[j] ≤ s < nodes[j + 1].
            let j1 = nodes.partition_point(|x| *x <= s1) - 1;
            let j2 = nodes.partition_point(|x| *x <= s2) - 1;
            let integral = if j1 == j2 {
                panel(s1, s2)?
            } else {
                let head = panel(s1, nodes[j1 + 1])?;
                let tail = if nodes[j2] < s2 {
                    panel(nodes[j2], s2)?
                } else {
                    T::zero()
                };
                head + (prefix[j2] - prefix[j1 + 1]) + tail
            };
            defect(s1, s2, integral)
        })
        .collect::<Result<_, SolveError>>()?;
    for d in pair_defects {
        worst = worst.max(d);
    }
    Ok(worst)
}
