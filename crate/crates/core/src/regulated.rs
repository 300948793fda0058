//! Left-continuous regulated functions with finitely many breakpoints per
//! compact interval.

use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Side};
use crate::scalar::{sort_dedup, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FnError {
    #[error("t = {t} lies outside the domain {domain}")]
    OutOfDomain { t: f64, domain: String },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("a regulated function needs at least one segment")]
    NoSegments,
    #[error("first segment starts at {found}, domain starts at {expected}")]
    StartMismatch { expected: f64, found: f64 },
    #[error("segment starts must be strictly increasing and inside the domain (offending start {at})")]
    BadBreakpoint { at: f64 },
    #[error("empty domain [{start}, {end}]")]
    EmptyDomain { start: f64, end: f64 },
    #[error("not left-continuous at {at}: value {value}, values approaching from the left {approach:?}")]
    NotLeftContinuous {
        at: f64,
        value: f64,
        approach: [f64; 3],
    },
    #[error("segment starting at {segment} cannot be evaluated at {t}: {source}")]
    Eval {
        segment: f64,
        t: f64,
        source: EvalError,
    },
}

/// Closed domain `[start, end]`, or `[start, ∞)` when `end` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domain<T> {
    pub start: T,
    pub end: Option<T>,
}

impl<T: Scalar> Domain<T> {
    pub fn new(start: T, end: Option<T>) -> Self {
        Domain { start, end }
    }

    pub fn half_line(start: T) -> Self {
        Domain { start, end: None }
    }

    pub fn contains(&self, t: T) -> bool {
        t >= self.start && self.end.is_none_or(|e| t <= e)
    }

    pub fn covers(&self, a: T, b: T) -> bool {
        self.contains(a) && self.contains(b)
    }

    pub(crate) fn check(&self, t: T) -> Result<(), FnError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(FnError::OutOfDomain {
                t: t.as_f64(),
                domain: self.to_string(),
            })
        }
    }
}

impl<T: Scalar> std::fmt::Display for Domain<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.end {
            Some(e) => write!(f, "[{}, {}]", self.start, e),
            None => write!(f, "[{}, inf)", self.start),
        }
    }
}

/// A left-continuous regulated function of one real variable.
///
/// `value_at` returns the function value, which at every interior point equals
/// the limit from the left. `breakpoints_in` lists the points where the
/// function (or its derivative) may fail to be smooth, so that quadrature can
/// split panels there.
pub trait Regulated<T: Scalar>: Send + Sync {
    fn domain(&self) -> Domain<T>;

    fn value_at(&self, t: T) -> Result<T, FnError>;

    /// `f(t+)`. Defined on the domain except at its right end.
    fn right_limit(&self, t: T) -> Result<T, FnError>;

    /// Sorted breakpoints lying in `[a, b]`.
    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError>;
}

impl<T: Scalar, R: Regulated<T> + ?Sized> Regulated<T> for &R {
    fn domain(&self) -> Domain<T> {
        (**self).domain()
    }
    fn value_at(&self, t: T) -> Result<T, FnError> {
        (**self).value_at(t)
    }
    fn right_limit(&self, t: T) -> Result<T, FnError> {
        (**self).right_limit(t)
    }
    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        (**self).breakpoints_in(a, b)
    }
}

impl<T: Scalar, R: Regulated<T> + ?Sized> Regulated<T> for Arc<R> {
    fn domain(&self) -> Domain<T> {
        (**self).domain()
    }
    fn value_at(&self, t: T) -> Result<T, FnError> {
        (**self).value_at(t)
    }
    fn right_limit(&self, t: T) -> Result<T, FnError> {
        (**self).right_limit(t)
    }
    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        (**self).breakpoints_in(a, b)
    }
}

pub(crate) fn check_interval<T: Scalar>(a: T, b: T) -> Result<(), FnError> {
    if a > b || a.is_nan() || b.is_nan() {
        Err(FnError::InvalidInterval {
            a: a.as_f64(),
            b: b.as_f64(),
        })
    } else {
        Ok(())
    }
}

fn display_expr<S: Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment<T> {
    pub start: T,
    #[serde(serialize_with = "display_expr")]
    pub body: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpPoint<T> {
    pub at: T,
    pub value: T,
    pub right_limit: T,
}

/// Piecewise function whose segments are expression bodies.
///
/// Segment `i` owns `(start_i, start_{i+1}]`; the first segment also owns the
/// domain start, where the value is the right limit of its body. Constant
/// endpoints of `chi` and guard thresholds inside a body become extra
/// breakpoints automatically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatedFn<T> {
    domain: Domain<T>,
    segments: Vec<Segment<T>>,
    breakpoints: Vec<T>,
    jumps: Vec<JumpPoint<T>>,
}

const PROBE_STEPS: [f64; 3] = [1e-4, 1e-6, 1e-8];

impl<T: Scalar> RegulatedFn<T> {
    pub fn new(domain: Domain<T>, pieces: Vec<(T, Expr)>) -> Result<Self, BuildError> {
        if let Some(end) = domain.end {
            if end <= domain.start {
                return Err(BuildError::EmptyDomain {
                    start: domain.start.as_f64(),
                    end: end.as_f64(),
                });
            }
        }
        let first = pieces.first().ok_or(BuildError::NoSegments)?;
        if first.0 != domain.start {
            return Err(BuildError::StartMismatch {
                expected: domain.start.as_f64(),
                found: first.0.as_f64(),
            });
        }
        for w in pieces.windows(2) {
            if w[1].0 <= w[0].0 || !domain.end.is_none_or(|e| w[1].0 < e) {
                return Err(BuildError::BadBreakpoint { at: w[1].0.as_f64() });
            }
        }

        let mut segments = Vec::new();
        for (i, (start, body)) in pieces.iter().enumerate() {
            let stop = pieces.get(i + 1).map(|p| p.0).or(domain.end);
            let mut starts = vec![*start];
            for c in body.critical_points() {
                let c = T::lit(c);
                if c > *start && stop.is_none_or(|s| c < s) {
                    starts.push(c);
                }
            }
            sort_dedup(&mut starts);
            for s in starts {
                segments.push(Segment {
                    start: s,
                    body: body.clone(),
                });
            }
        }

        let breakpoints: Vec<T> = segments.iter().skip(1).map(|s| s.start).collect();
        let mut f = RegulatedFn {
            domain,
            segments,
            breakpoints,
            jumps: Vec::new(),
        };
        f.validate_segments()?;
        f.jumps = f.find_jumps()?;
        Ok(f)
    }

    pub fn from_expr(domain: Domain<T>, body: Expr) -> Result<Self, BuildError> {
        let start = domain.start;
        Self::new(domain, vec![(start, body)])
    }

    pub fn constant(domain: Domain<T>, c: f64) -> Self {
        Self::from_expr(domain, Expr::Num(c)).expect("constant function is regulated")
    }

    pub fn segments(&self) -> &[Segment<T>] {
        &self.segments
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn jumps(&self) -> &[JumpPoint<T>] {
        &self.jumps
    }

    /// The constant value, when every segment body is the same `t`-free expression.
    pub fn as_constant(&self) -> Option<f64> {
        let c = self.segments[0].body.as_constant()?;
        self.segments
            .iter()
            .all(|s| s.body.as_constant() == Some(c))
            .then_some(c)
    }

    pub fn has_null_exception(&self) -> bool {
        self.segments.iter().any(|s| s.body.has_null_exception())
    }

    fn segment_end(&self, i: usize) -> Option<T> {
        self.segments.get(i + 1).map(|s| s.start).or(self.domain.end)
    }

    fn validate_segments(&self) -> Result<(), BuildError> {
        for (i, seg) in self.segments.iter().enumerate() {
            let span = match self.segment_end(i) {
                Some(e) => e - seg.start,
                None => T::lit(4.0) * seg.start.abs().max(T::one()),
            };
            for k in 1..16 {
                let t = seg.start + span * T::lit(k as f64 / 16.0);
                seg.body.eval(t).map_err(|source| BuildError::Eval {
                    segment: seg.start.as_f64(),
                    t: t.as_f64(),
                    source,
                })?;
            }
        }
        for i in 1..self.segments.len() {
            let s = self.segments[i].start;
            let left = &self.segments[i - 1];
            let eval = |t: T| {
                left.body.eval(t).map_err(|source| BuildError::Eval {
                    segment: left.start.as_f64(),
                    t: t.as_f64(),
                    source,
                })
            };
            let value = eval(s)?;
            let room = (s - left.start) / T::lit(2.0);
            let scale = s.abs().max(T::one());
            let mut approach = [0.0; 3];
            let mut d = [T::zero(); 3];
            for (j, h) in PROBE_STEPS.iter().enumerate() {
                let h = (T::lit(*h) * scale).min(room * T::lit(10f64.powi(-2 * j as i32)));
                let v = eval(s - h)?;
                approach[j] = v.as_f64();
                d[j] = (value - v).abs();
            }
            let mag = value.abs().max(T::one());
            let continuous = d[2] <= T::lit(1e-9) * mag
                || (d[1] <= d[0] / T::lit(2.0)
                    && d[2] <= d[1] / T::lit(2.0)
                    && d[2] <= T::lit(1e-3) * mag);
            if !continuous {
                return Err(BuildError::NotLeftContinuous {
                    at: s.as_f64(),
                    value: value.as_f64(),
                    approach,
                });
            }
        }
        Ok(())
    }

    fn find_jumps(&self) -> Result<Vec<JumpPoint<T>>, BuildError> {
        let mut out = Vec::new();
        for i in 1..self.segments.len() {
            let s = self.segments[i].start;
            let err = |seg: &Segment<T>, source| BuildError::Eval {
                segment: seg.start.as_f64(),
                t: s.as_f64(),
                source,
            };
            let value = self.segments[i - 1]
                .body
                .eval_side(s, Side::Left)
                .map_err(|e| err(&self.segments[i - 1], e))?;
            let right = self.segments[i]
                .body
                .eval_side(s, Side::Right)
                .map_err(|e| err(&self.segments[i], e))?;
            let tol = T::lit(64.0) * T::epsilon() * value.abs().max(right.abs()).max(T::one());
            if (right - value).abs() > tol {
                out.push(JumpPoint {
                    at: s,
                    value,
                    right_limit: right,
                });
            }
        }
        Ok(out)
    }

    fn eval_err(t: T) -> impl FnOnce(EvalError) -> FnError {
        move |source| FnError::Eval {
            t: t.as_f64(),
            source,
        }
    }
}

impl<T: Scalar> Regulated<T> for RegulatedFn<T> {
    fn domain(&self) -> Domain<T> {
        self.domain
    }

    fn value_at(&self, t: T) -> Result<T, FnError> {
        self.domain.check(t)?;
        if t == self.domain.start {
            return self.segments[0]
                .body
                .eval_side(t, Side::Right)
                .map_err(Self::eval_err(t));
        }
        let i = self.segments.partition_point(|s| s.start < t) - 1;
        self.segments[i].body.eval(t).map_err(Self::eval_err(t))
    }

    fn right_limit(&self, t: T) -> Result<T, FnError> {
        self.domain.check(t)?;
        if self.domain.end == Some(t) {
            return Err(FnError::OutOfDomain {
                t: t.as_f64(),
                domain: format!("{} (right limit at the right end)", self.domain),
            });
        }
        let i = self.segments.partition_point(|s| s.start <= t) - 1;
        self.segments[i]
            .body
            .eval_side(t, Side::Right)
            .map_err(Self::eval_err(t))
    }

    fn breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        check_interval(a, b)?;
        let lo = self.breakpoints.partition_point(|x| *x < a);
        let hi = self.breakpoints.partition_point(|x| *x <= b);
        Ok(self.breakpoints[lo..hi].to_vec())
    }
}
