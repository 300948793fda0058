//! Kurzweil–Stieltjes integrals `∫ f dg` for integrators that split into a
//! piecewise-smooth density plus a finite list of jumps.
//!
//! The density part is integrated by globally adaptive 21-point
//! Gauss–Kronrod quadrature over panels cut at every breakpoint of `f` and of
//! the density. A jump of `g` at `s` contributes `f(s) (g(s+) - g(s))` when
//! `s ∈ [a, b)`, so a jump sitting on the right end of the range is left to the
//! next interval.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::regulated::{check_interval, Domain, FnError, Regulated, RegulatedFn};
use crate::scalar::{sort_dedup, Scalar};

/// Default absolute tolerance for desk-scale intervals.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Maximum number of subintervals per call.
pub const PANEL_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error(transparent)]
    Fn(#[from] FnError),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("integrand is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("[{a}, {b}] is outside the {what} domain {domain}")]
    OutsideDomain {
        what: &'static str,
        a: f64,
        b: f64,
        domain: String,
    },
    #[error("tolerance not reached within {panels} panels: value {value} with error estimate {estimate}")]
    NotConverged {
        value: f64,
        estimate: f64,
        panels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("jump points must be strictly increasing (at {at})")]
    UnsortedJumps { at: f64 },
    #[error("jump at {at} has zero size")]
    ZeroJump { at: f64 },
    #[error("jump data must be finite (at {at})")]
    NonFinite { at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult<T> {
    pub value: T,
    pub error_estimate: T,
    pub panels_used: usize,
    /// False when the panel budget ran out before the tolerance was met.
    pub converged: bool,
}

impl<T: Scalar> QuadResult<T> {
    fn zero() -> Self {
        QuadResult {
            value: T::zero(),
            error_estimate: T::zero(),
            panels_used: 1,
            converged: true,
        }
    }

    /// Turns a flagged result into an error.
    pub fn ensure_converged(self) -> Result<Self, QuadError> {
        if self.converged {
            Ok(self)
        } else {
            Err(QuadError::NotConverged {
                value: self.value.as_f64(),
                estimate: self.error_estimate.as_f64(),
                panels: self.panels_used,
            })
        }
    }
}

/// Absolutely continuous part of an integrator.
#[derive(Debug, Clone, PartialEq)]
pub enum Density<T> {
    /// `g' ≡ 1`.
    Unit,
    /// Pure jump integrator.
    Zero,
    Fn(RegulatedFn<T>),
}

impl<T: Scalar> Serialize for Density<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Density::Unit => s.serialize_str("1"),
            Density::Zero => s.serialize_str("0"),
            Density::Fn(f) => f.serialize(s),
        }
    }
}

/// Integrator `g = base_value + ∫_{base_point} density + Σ jumps`, left-continuous.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Integrator<T> {
    density: Density<T>,
    /// `(s_j, g(s_j+) - g(s_j))`, strictly increasing in `s_j`.
    jumps: Vec<(T, T)>,
    base_point: T,
    base_value: T,
}

impl<T: Scalar> Integrator<T> {
    /// `g(t) = t`.
    pub fn identity() -> Self {
        Integrator {
            density: Density::Unit,
            jumps: Vec::new(),
            base_point: T::zero(),
            base_value: T::zero(),
        }
    }

    pub fn new(
        density: Density<T>,
        jumps: Vec<(T, T)>,
        base_point: T,
        base_value: T,
    ) -> Result<Self, IntegratorError> {
        for (s, d) in &jumps {
            if !s.is_finite() || !d.is_finite() {
                return Err(IntegratorError::NonFinite { at: s.as_f64() });
            }
            if *d == T::zero() {
                return Err(IntegratorError::ZeroJump { at: s.as_f64() });
            }
        }
        for w in jumps.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(IntegratorError::UnsortedJumps {
                    at: w[1].0.as_f64(),
                });
            }
        }
        Ok(Integrator {
            density,
            jumps,
            base_point,
            base_value,
        })
    }

    pub fn with_density(density: RegulatedFn<T>) -> Self {
        Integrator {
            base_point: density.domain().start,
            density: Density::Fn(density),
            jumps: Vec::new(),
            base_value: T::zero(),
        }
    }

    pub fn density(&self) -> &Density<T> {
        &self.density
    }

    pub fn jumps(&self) -> &[(T, T)] {
        &self.jumps
    }

    pub fn base(&self) -> (T, T) {
        (self.base_point, self.base_value)
    }

    /// True when `g(t) = t + const`.
    pub fn is_identity(&self) -> bool {
        self.jumps.is_empty()
            && match &self.density {
                Density::Unit => true,
                Density::Zero => false,
                Density::Fn(f) => f.as_constant() == Some(1.0),
            }
    }

    pub fn density_at(&self, s: T) -> Result<T, FnError> {
        match &self.density {
            Density::Unit => Ok(T::one()),
            Density::Zero => Ok(T::zero()),
            Density::Fn(f) => f.value_at(s),
        }
    }

    pub fn density_domain(&self) -> Option<Domain<T>> {
        match &self.density {
            Density::Fn(f) => Some(f.domain()),
            _ => None,
        }
    }

    pub fn density_breakpoints_in(&self, a: T, b: T) -> Result<Vec<T>, FnError> {
        match &self.density {
            Density::Fn(f) => f.breakpoints_in(a, b),
            _ => Ok(Vec::new()),
        }
    }

    /// Jumps with `s ∈ [a, b)`.
    pub fn jumps_in(&self, a: T, b: T) -> &[(T, T)] {
        let lo = self.jumps.partition_point(|(s, _)| *s < a);
        let hi = self.jumps.partition_point(|(s, _)| *s < b);
        &self.jumps[lo..hi.max(lo)]
    }

    /// `g(s+) - g(s)`, if `g` jumps at `s`.
    pub fn jump_at(&self, s: T) -> Option<T> {
        self.jumps
            .binary_search_by(|(x, _)| x.partial_cmp(&s).unwrap_or(Ordering::Equal))
            .ok()
            .map(|i| self.jumps[i].1)
    }

    /// Reconstructs `g(t)` from the base value, the density integral and the jumps.
    pub fn value_at(&self, t: T, tol: T) -> Result<T, QuadError> {
        let one = RegulatedFn::constant(Domain::new(t.min(self.base_point), None), 1.0);
        let (lo, hi, sign) = if t >= self.base_point {
            (self.base_point, t, T::one())
        } else {
            (t, self.base_point, -T::one())
        };
        let r = integrate(&one, self, lo, hi, tol)?.ensure_converged()?;
        Ok(self.base_value + sign * r.value)
    }

    /// Density `≥ 0` at every probe and every jump in `[a, b)` nonnegative.
    pub fn is_nondecreasing_on(&self, a: T, b: T, probes: usize) -> Result<bool, FnError> {
        if self.jumps_in(a, b).iter().any(|(_, d)| *d < T::zero()) {
            return Ok(false);
        }
        for s in probe_points(a, b, probes) {
            if self.density_at(s)? < T::zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Cell midpoints of a uniform partition of `[a, b]` into `n` cells.
pub(crate) fn probe_points<T: Scalar>(a: T, b: T, n: usize) -> impl Iterator<Item = T> {
    let n = n.max(1);
    let h = (b - a) / T::from_usize(n).unwrap();
    (0..n).map(move |i| a + h * (T::from_usize(i).unwrap() + T::lit(0.5)))
}

/// `∫_a^b f dg`.
pub fn integrate<T, F>(f: &F, g: &Integrator<T>, a: T, b: T, tol: T) -> Result<QuadResult<T>, QuadError>
where
    T: Scalar,
    F: Regulated<T> + ?Sized,
{
    check_interval(a, b)?;
    if !(tol > T::zero()) {
        return Err(QuadError::BadTolerance(tol.as_f64()));
    }
    if a == b {
        return Ok(QuadResult::zero());
    }
    let fd = f.domain();
    if !fd.covers(a, b) {
        return Err(QuadError::OutsideDomain {
            what: "integrand",
            a: a.as_f64(),
            b: b.as_f64(),
            domain: fd.to_string(),
        });
    }
    if let Some(gd) = g.density_domain() {
        if !gd.covers(a, b) {
            return Err(QuadError::OutsideDomain {
                what: "integrator density",
                a: a.as_f64(),
                b: b.as_f64(),
                domain: gd.to_string(),
            });
        }
    }

    let mut result = match g.density {
        Density::Zero => QuadResult::zero(),
        _ => {
            let mut splits = vec![a, b];
            splits.extend(f.breakpoints_in(a, b)?);
            splits.extend(g.density_breakpoints_in(a, b)?);
            sort_dedup(&mut splits);
            drop_slivers(&mut splits);
            adaptive_gk21(
                |s| {
                    let v = f.value_at(s)? * g.density_at(s)?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(QuadError::NonFinite { t: s.as_f64() })
                    }
                },
                &splits,
                tol,
                PANEL_BUDGET,
            )?
        }
    };

    let mut jump_sum = T::zero();
    let mut jump_abs = T::zero();
    for (s, d) in g.jumps_in(a, b) {
        let term = f.value_at(*s)? * *d;
        jump_sum = jump_sum + term;
        jump_abs = jump_abs + term.abs();
    }
    result.value = result.value + jump_sum;
    result.error_estimate = result.error_estimate + T::lit(4.0) * T::epsilon() * jump_abs;
    Ok(result)
}

/// Removes interior split points a few ulps away from a kept neighbour; such
/// panels come from round-off in shifted grids and carry nothing.
fn drop_slivers<T: Scalar>(splits: &mut Vec<T>) {
    let n = splits.len();
    if n <= 2 {
        return;
    }
    let (a, b) = (splits[0], splits[n - 1]);
    let gap = T::lit(16.0) * T::epsilon() * a.abs().max(b.abs());
    let mut kept = vec![a];
    for &x in &splits[1..n - 1] {
        if x - *kept.last().unwrap() > gap && b - x > gap {
            kept.push(x);
        }
    }
    kept.push(b);
    *splits = kept;
}

/// `∫_a^b f(s) ds`.
pub fn integrate_dt<T, F>(f: &F, a: T, b: T, tol: T) -> Result<QuadResult<T>, QuadError>
where
    T: Scalar,
    F: Regulated<T> + ?Sized,
{
    integrate(f, &Integrator::identity(), a, b, tol)
}

/// Alexiewicz norm `sup_{a≤t≤b} |∫_a^t f|`, sampled at `grid` equally spaced
/// points including both ends. This is a lower bound for the true supremum
/// that tightens as the grid is refined.
pub fn alexiewicz_norm<T, F>(f: &F, a: T, b: T, grid: usize) -> Result<T, QuadError>
where
    T: Scalar,
    F: Regulated<T> + ?Sized,
{
    check_interval(a, b)?;
    let grid = grid.max(2);
    let h = (b - a) / T::from_usize(grid - 1).unwrap();
    let per_cell = T::lit(DEFAULT_TOL) / T::from_usize(grid).unwrap();
    let mut acc = T::zero();
    let mut best = T::zero();
    let mut left = a;
    for i in 1..grid {
        let right = if i == grid - 1 {
            b
        } else {
            a + h * T::from_usize(i).unwrap()
        };
        acc = acc + integrate_dt(f, left, right, per_cell)?.ensure_converged()?.value;
        best = best.max(acc.abs());
        left = right;
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Gauss–Kronrod (10, 21) pair

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_600_525_478,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

struct Cell<T> {
    a: T,
    b: T,
    value: T,
    err: T,
    abs: T,
}

impl<T: Scalar> PartialEq for Cell<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Cell<T> {}
impl<T: Scalar> PartialOrd for Cell<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Cell<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .as_f64()
            .total_cmp(&other.err.as_f64())
            .then_with(|| other.a.as_f64().total_cmp(&self.a.as_f64()))
    }
}

fn gk21<T, E, H>(h: &H, a: T, b: T) -> Result<Cell<T>, E>
where
    T: Scalar,
    H: Fn(T) -> Result<T, E>,
{
    let center = (a + b) / T::lit(2.0);
    let half = (b - a) / T::lit(2.0);
    let fc = h(center)?;
    let mut kronrod = fc * T::lit(WGK[10]);
    let mut gauss = T::zero();
    let mut res_abs = kronrod.abs();
    let mut f1 = [T::zero(); 10];
    let mut f2 = [T::zero(); 10];
    for j in 0..10 {
        let dx = half * T::lit(XGK[j]);
        let v1 = h(center - dx)?;
        let v2 = h(center + dx)?;
        f1[j] = v1;
        f2[j] = v2;
        kronrod = kronrod + T::lit(WGK[j]) * (v1 + v2);
        res_abs = res_abs + T::lit(WGK[j]) * (v1.abs() + v2.abs());
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * (v1 + v2);
        }
    }
    let mean = kronrod / T::lit(2.0);
    let mut res_asc = T::lit(WGK[10]) * (fc - mean).abs();
    for j in 0..10 {
        res_asc = res_asc + T::lit(WGK[j]) * ((f1[j] - mean).abs() + (f2[j] - mean).abs());
    }
    let width = half.abs();
    let value = kronrod * half;
    res_abs = res_abs * width;
    res_asc = res_asc * width;
    let err = rescale_error((kronrod - gauss) * half, res_abs, res_asc);
    Ok(Cell {
        a,
        b,
        value,
        err,
        abs: res_abs,
    })
}

fn rescale_error<T: Scalar>(err: T, res_abs: T, res_asc: T) -> T {
    let mut e = err.abs();
    if res_asc != T::zero() && e != T::zero() {
        let scale = (T::lit(200.0) * e / res_asc).powf(T::lit(1.5));
        e = if scale < T::one() { res_asc * scale } else { res_asc };
    }
    let tiny = T::min_positive_value() / (T::lit(50.0) * T::epsilon());
    if res_abs > tiny {
        e = e.max(T::lit(50.0) * T::epsilon() * res_abs);
    }
    e
}

/// Globally adaptive GK21 over the panels delimited by `splits`: the cell with
/// the largest error estimate is bisected until the summed estimate drops
/// below `max(tol, 100 ε Σ|f|)` or the budget is spent.
pub(crate) fn adaptive_gk21<T, E, H>(
    h: H,
    splits: &[T],
    tol: T,
    budget: usize,
) -> Result<QuadResult<T>, E>
where
    T: Scalar,
    H: Fn(T) -> Result<T, E>,
{
    let mut heap = BinaryHeap::new();
    let mut frozen: Vec<Cell<T>> = Vec::new();
    for w in splits.windows(2) {
        if w[1] > w[0] {
            heap.push(gk21(&h, w[0], w[1])?);
        }
    }
    let floor = T::lit(100.0) * T::epsilon();
    let span = match (splits.first(), splits.last()) {
        (Some(a), Some(b)) => *b - *a,
        _ => T::zero(),
    };
    let min_width = span * T::epsilon() * T::epsilon();
    let totals = |heap: &BinaryHeap<Cell<T>>, frozen: &[Cell<T>]| {
        heap.iter()
            .chain(frozen.iter())
            .fold((T::zero(), T::zero()), |(e, s), c| (e + c.err, s + c.abs))
    };
    let mut converged;
    loop {
        let (err, abs) = totals(&heap, &frozen);
        let target = tol.max(floor * abs);
        converged = err <= target;
        if converged || heap.len() + frozen.len() >= budget {
            break;
        }
        let worst = match heap.pop() {
            Some(c) => c,
            None => break,
        };
        let mid = (worst.a + worst.b) / T::lit(2.0);
        let width = worst.b - worst.a;
        if mid <= worst.a
            || mid >= worst.b
            || width <= min_width
            || width <= T::lit(8.0) * T::epsilon() * worst.a.abs().max(worst.b.abs())
        {
            frozen.push(worst);
            continue;
        }
        heap.push(gk21(&h, worst.a, mid)?);
        heap.push(gk21(&h, mid, worst.b)?);
    }
    let mut cells: Vec<Cell<T>> = heap.into_vec();
    cells.extend(frozen);
    cells.sort_by(|x, y| x.a.as_f64().total_cmp(&y.a.as_f64()));
    let value = cells.iter().map(|c| c.value).sum::<T>();
    let (err, abs) = cells
        .iter()
        .fold((T::zero(), T::zero()), |(e, s), c| (e + c.err, s + c.abs));
    Ok(QuadResult {
        value,
        error_estimate: err + T::epsilon() * abs,
        panels_used: cells.len().max(1),
        converged,
    })
}
