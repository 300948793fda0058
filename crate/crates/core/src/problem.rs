//! Impulsive measure delay problems
//!
//! ```text
//! Dy = -p(t) y(t - τ) Dg,   t ≥ t0,
//! y(t_k+) = (1 + b_k) y(t_k),
//! y = φ on [t0 - τ, t0],
//! ```
//!
//! impulse schedules, and the window-weighted coefficient
//! `P(t) = Π_{t-τ ≤ t_k < t} (1 + b_k) p(t)`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::regulated::{check_interval, Domain, FnError, Regulated, RegulatedFn};
use crate::scalar::{sort_dedup, Scalar};
use crate::stieltjes::{integrate, Integrator, DEFAULT_TOL};

/// Maximum number of generated impulse points a single query may visit.
pub const UNROLL_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("query up to {hi} needs more than {limit} generated impulse points")]
    BeyondUnrollLimit { hi: f64, limit: usize },
    #[error(transparent)]
    Fn(#[from] FnError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("t = {t} is below {min}, where the window [t - tau, t) leaves the problem's scope")]
    OutOfScope { t: f64, min: f64 },
    #[error(transparent)]
    Fn(#[from] FnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Arithmetic tail of a schedule: points `first + k·period`, `k ≥ 0`, all with the same `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Generator<T> {
    pub first: T,
    pub period: T,
    pub b: T,
}

/// Impulse times `t_k` with magnitudes `b_k`: an explicit list followed by an
/// optional arithmetic generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpulseSchedule<T> {
    points: Vec<T>,
    b: Vec<T>,
    generator: Option<Generator<T>>,
}

impl<T: Scalar> Default for ImpulseSchedule<T> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<T: Scalar> ImpulseSchedule<T> {
    pub fn empty() -> Self {
        ImpulseSchedule {
            points: Vec::new(),
            b: Vec::new(),
            generator: None,
        }
    }

    /// Explicit schedule. Nothing is checked here; see [`ImpulseSchedule::violations`].
    pub fn new(points: Vec<T>, b: Vec<T>) -> Self {
        ImpulseSchedule {
            points,
            b,
            generator: None,
        }
    }

    pub fn with_generator(mut self, first: T, period: T, b: T) -> Self {
        self.generator = Some(Generator { first, period, b });
        self
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn magnitudes(&self) -> &[T] {
        &self.b
    }

    pub fn generator(&self) -> Option<&Generator<T>> {
        self.generator.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.generator.is_none()
    }

    /// Broken invariants, each as `(field, rule)`.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.points.len() != self.b.len() {
            out.push(Violation::new(
                "impulses.b",
                format!(
                    "needs one magnitude per point ({} points, {} magnitudes)",
                    self.points.len(),
                    self.b.len()
                ),
            ));
        }
        if self.points.iter().chain(&self.b).any(|x| !x.is_finite()) {
            out.push(Violation::new("impulses", "values must be finite"));
        }
        if self.points.windows(2).any(|w| w[1] <= w[0]) {
            out.push(Violation::new("impulses.points", "must be strictly increasing"));
        }
        for (k, b) in self.b.iter().enumerate() {
            if *b == -T::one() {
                out.push(Violation::new(
                    format!("impulses.b[{k}]"),
                    "b_k = -1 forbidden",
                ));
            }
        }
        if let Some(g) = &self.generator {
            if !(g.period > T::zero()) || !g.period.is_finite() {
                out.push(Violation::new(
                    "impulses.generator.period",
                    "must be positive",
                ));
            }
            if g.b == -T::one() {
                out.push(Violation::new("impulses.generator.b", "b_k = -1 forbidden"));
            }
            if !g.first.is_finite() || !g.b.is_finite() {
                out.push(Violation::new("impulses.generator", "values must be finite"));
            }
            if self.points.last().is_some_and(|l| *l >= g.first) {
                out.push(Violation::new(
                    "impulses.generator.first",
                    "must come after every explicit point",
                ));
            }
        }
        out
    }

    /// Index range of generated points lying in `[lo, hi)` (or `[lo, hi]`).
    fn generated_range(&self, lo: T, hi: T, closed: bool) -> Option<(usize, usize)> {
        let g = self.generator.as_ref()?;
        if !(g.period > T::zero()) {
            return None;
        }
        let k_of = |x: T| ((x - g.first) / g.period).ceil().max(T::zero());
        let mut k_lo = k_of(lo).to_usize()?;
        while k_lo > 0 && self.gen_point(g, k_lo - 1) >= lo {
            k_lo -= 1;
        }
        while self.gen_point(g, k_lo) < lo {
            k_lo += 1;
        }
        let k_hi_f = ((hi - g.first) / g.period).floor() + T::one();
        if k_hi_f <= T::zero() {
            return Some((k_lo, k_lo));
        }
        let mut k_hi = k_hi_f.to_usize().unwrap_or(usize::MAX);
        let inside = |x: T| if closed { x <= hi } else { x < hi };
        while k_hi > k_lo && !inside(self.gen_point(g, k_hi - 1)) {
            k_hi -= 1;
        }
        while k_hi < usize::MAX && inside(self.gen_point(g, k_hi)) {
            k_hi += 1;
        }
        Some((k_lo, k_hi.max(k_lo)))
    }

    fn gen_point(&self, g: &Generator<T>, k: usize) -> T {
        g.first + g.period * T::from_usize(k).unwrap()
    }

    fn collect(&self, lo: T, hi: T, closed: bool) -> Result<Vec<(T, T)>, ScheduleError> {
        check_interval(lo, hi)?;
        let inside = |x: T| x >= lo && if closed { x <= hi } else { x < hi };
        let mut out: Vec<(T, T)> = self
            .points
            .iter()
            .zip(&self.b)
            .filter(|(t, _)| inside(**t))
            .map(|(t, b)| (*t, *b))
            .collect();
        if let (Some(g), Some((k_lo, k_hi))) =
            (self.generator.as_ref(), self.generated_range(lo, hi, closed))
        {
            if k_hi - k_lo > UNROLL_LIMIT || k_hi > UNROLL_LIMIT.saturating_mul(16) {
                return Err(ScheduleError::BeyondUnrollLimit {
                    hi: hi.as_f64(),
                    limit: UNROLL_LIMIT,
                });
            }
            out.extend((k_lo..k_hi).map(|k| (self.gen_point(g, k), g.b)));
        }
        Ok(out)
    }

    /// Impulses with `t_k ∈ [lo, hi)`, in increasing order.
    pub fn impulses_in(&self, lo: T, hi: T) -> Result<Vec<(T, T)>, ScheduleError> {
        self.collect(lo, hi, false)
    }

    /// Impulses with `t_k ∈ [lo, hi]`.
    pub fn impulses_in_closed(&self, lo: T, hi: T) -> Result<Vec<(T, T)>, ScheduleError> {
        self.collect(lo, hi, true)
    }

    /// `b_k` of the impulse at exactly `t`, if any.
    pub fn b_at(&self, t: T) -> Option<T> {
        if let Ok(i) = self
            .points
            .binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Equal))
        {
            return self.b.get(i).copied();
        }
        let g = self.generator.as_ref()?;
        let (k_lo, k_hi) = self.generated_range(t, t, true)?;
        (k_hi > k_lo).then_some(g.b)
    }

    /// `Π_{t_k ∈ [lo, hi)} (1 + b_k)`; the empty product is 1.
    pub fn product_factor(&self, lo: T, hi: T) -> T {
        if !(lo < hi) {
            return T::one();
        }
        let mut acc = T::one();
        for (t, b) in self.points.iter().zip(&self.b) {
            if *t >= lo && *t < hi {
                acc = acc * (T::one() + *b);
            }
        }
        if let (Some(g), Some((k_lo, k_hi))) =
            (self.generator.as_ref(), self.generated_range(lo, hi, false))
        {
            let n = k_hi - k_lo;
            let f = T::one() + g.b;
            acc = match i32::try_from(n) {
                Ok(n) if n <= 64 => (0..n).fold(acc, |a, _| a * f),
                Ok(n) => acc * f.powi(n),
                Err(_) => acc * f.powf(T::from_usize(n).unwrap()),
            };
        }
        acc
    }

    /// True when every impulse in `[lo, hi)` has `b_k > -1`.
    pub fn all_above_minus_one(&self, lo: T, hi: T) -> bool {
        let explicit = self
            .points
            .iter()
            .zip(&self.b)
            .filter(|(t, _)| **t >= lo && **t < hi)
            .all(|(_, b)| *b > -T::one());
        let generated = match (self.generator.as_ref(), self.generated_range(lo, hi, false)) {
            (Some(g), Some((k_lo, k_hi))) => k_hi == k_lo || g.b > -T::one(),
            _ => true,
        };
        explicit && generated
    }
}

/// A broken problem invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasureDDEProblem<T> {
    pub p: RegulatedFn<T>,
    pub g: Integrator<T>,
    pub tau: T,
    pub t0: T,
    /// History on `[t0 - τ, t0]`.
    pub phi: RegulatedFn<T>,
    pub impulses: ImpulseSchedule<T>,
}

impl<T: Scalar> MeasureDDEProblem<T> {
    /// Every broken invariant; empty when the problem is well posed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            out.push(Violation::new("tau", "tau must be positive"));
        }
        if !self.t0.is_finite() {
            out.push(Violation::new("t0", "must be finite"));
        }
        out.extend(self.impulses.violations());
        if let Some(first) = self.impulses.points().first() {
            if *first <= self.t0 {
                out.push(Violation::new(
                    "impulses.points",
                    "impulse points must lie in (t0, inf)",
                ));
            }
        }
        if let Some(g) = self.impulses.generator() {
            if g.first <= self.t0 {
                out.push(Violation::new(
                    "impulses.generator.first",
                    "impulse points must lie in (t0, inf)",
                ));
            }
        }
        if !out.is_empty() {
            return out;
        }

        let hist = self.phi.domain();
        if hist.start != self.t0 - self.tau || hist.end != Some(self.t0) {
            out.push(Violation::new(
                "phi",
                format!(
                    "domain must be exactly [t0 - tau, t0] = [{}, {}], got {}",
                    self.t0 - self.tau,
                    self.t0,
                    hist
                ),
            ));
        }
        let pd = self.p.domain();
        if pd.start > self.t0 || pd.end.is_some() {
            out.push(Violation::new(
                "p",
                format!("must be defined on [t0, inf), got {pd}"),
            ));
        }
        if let Some(gd) = self.g.density_domain() {
            if gd.start > self.t0 || gd.end.is_some() {
                out.push(Violation::new(
                    "g.density",
                    format!("must be defined on [t0, inf), got {gd}"),
                ));
            }
        }
        for (s, _) in self.g.jumps() {
            if self.impulses.b_at(*s).is_some() {
                out.push(Violation::new(
                    "g.jumps",
                    format!("g must be continuous at impulse points (jump at {s})"),
                ));
            }
        }
        if !out.is_empty() {
            return out;
        }

        // ∫ p dg must exist: probe a few delay steps.
        for i in 0..4 {
            let a = self.t0 + self.tau * T::from_usize(i).unwrap();
            let b = a + self.tau;
            match integrate(&self.p, &self.g, a, b, T::lit(DEFAULT_TOL).max(T::epsilon())) {
                Ok(r) if r.converged => {}
                Ok(_) => {
                    out.push(Violation::new(
                        "p",
                        format!("integral of p dg over [{a}, {b}] did not converge"),
                    ));
                    break;
                }
                Err(e) => {
                    out.push(Violation::new(
                        "p",
                        format!("integral of p dg over [{a}, {b}] failed: {e}"),
                    ));
                    break;
                }
            }
        }
        out
    }

    /// `P(t) = Π_{t-τ ≤ t_k < t} (1 + b_k) p(t)`, for `t ≥ t0 + τ`.
    pub fn aux_p(&self, t: T) -> Result<T, ProblemError> {
        let min = self.t0 + self.tau;
        if !(t >= min) {
            return Err(ProblemError::OutOfScope {
                t: t.as_f64(),
                min: min.as_f64(),
            });
        }
        Ok(self.impulses.product_factor(t - self.tau, t) * self.p.value_at(t)?)
    }

    /// `P` as a regulated function on `[t0, ∞)`.
    pub fn aux_coefficient(&self) -> WindowWeighted<'_, T> {
        WindowWeighted {
            p: &self.p,
            sched: &self.impulses,
            tau: self.tau,
            floor: self.t0,
            inverse: false,
        }
    }
}

/// `p(t) · Π_{max(floor, t-τ) ≤ t_k < t} (1 + b_k)^{±1}` as a regulated function
/// on `[floor, ∞)`.
#[derive(Debug, Clone, Copy)]
pub struct WindowWeighted<'a, T> {
    pub p: &'a RegulatedFn<T>,
    pub sched: &'a ImpulseSchedule<T>,
    pub tau: T,
    pub floor: T,
    /// Use `(1 + b_k)^{-1}` factors.
    pub inverse: bool,
}

impl<T: Scalar> WindowWeighted<'_, T> {
    fn weight(&self, lo: T, hi: T) -> T {
        let f = self.sched.product_factor(lo.max(self.floor), hi);
        if self.inverse {
            T::one() / f
        } else {
            f
        }
    }
}

impl<T: Scalar> Regulated<T> for WindowWeighted<'_, T> {
    fn domain(&self) -> Domain<T> {
        Domain::new(self.floor.max(self.p.domain().start), None)
    }

    fn value_at(&self, t: T) -> Result<T, FnError> {
        self.domain().check(t)?;
        Ok(self.weight(t - self.tau, t) * self.p.value_at(t)?)
    }

    fn right_limit(&self, t: T) -> Result<T, FnError> {
        self.domain().check(t)?;
        // Window (t - τ, t]: shift both ends past any impulse sitting on them.
        let mut f = self.sched.product_factor((t - self.tau).max(self.floor), t);
        for (s, b) in self
            .sched
            .impulses_in_closed(t - self.tau, t)
            .map_err(|e| match e {
                ScheduleError::Fn(f) => f,
                other => FnError::OutOfDomain {
                    t: t.as_f64(),
                    domain: other.to_string(),
                },
            })?
        {
            if s == t - self.tau && s >= self.floor {
                f = f / (T::one() + b);
            }
            if s == t {
                f = f * (T::one() + b);
            }
        }
        let w = if self.inverse { T::one() / f } else { f };
        Ok(w * self.p.right_limit(t)?)
    }

    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        let mut out = self.p.breakpoints_in(a, b)?;
        let to_fn = |e: ScheduleError| match e {
            ScheduleError::Fn(f) => f,
            other => FnError::OutOfDomain {
                t: b.as_f64(),
                domain: other.to_string(),
            },
        };
        out.extend(
            self.sched
                .impulses_in_closed(a, b)
                .map_err(to_fn)?
                .into_iter()
                .map(|(s, _)| s),
        );
        out.extend(
            self.sched
                .impulses_in_closed(a - self.tau, b - self.tau)
                .map_err(to_fn)?
                .into_iter()
                .map(|(s, _)| s + self.tau)
                .filter(|s| *s >= a && *s <= b),
        );
        sort_dedup(&mut out);
        Ok(out)
    }
}
