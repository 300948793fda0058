//! Acceptance checks. Runs without the libtest harness so that every check
//! prints exactly one PASS/FAIL line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use mdde_core::criteria::{SignVerdict, Verdict};
use mdde_core::stieltjes::Density;
use mdde_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

fn func(domain: Domain<f64>, src: &str) -> RegulatedFn64 {
    RegulatedFn::from_expr(domain, parse(src).unwrap()).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn quartic_problem() -> Problem64 {
    MeasureDDEProblem {
        p: func(Domain::half_line(2.0), "t^4 * chi(4, inf) * ae_except_rationals"),
        g: Integrator::with_density(func(Domain::half_line(0.0), "6*t^2")),
        tau: 2.0,
        t0: 2.0,
        phi: func(Domain::new(0.0, Some(2.0)), "1"),
        impulses: ImpulseSchedule::empty().with_generator(4.0, 3.0, 0.5),
    }
}

fn inverse_square_problem() -> Problem64 {
    MeasureDDEProblem {
        p: func(Domain::half_line(2.0), "1/t^2"),
        g: Integrator::identity(),
        tau: 1.0,
        t0: 2.0,
        phi: func(Domain::new(1.0, Some(2.0)), "1"),
        impulses: ImpulseSchedule::empty(),
    }
}

fn unit_problem(sched: Schedule64) -> Problem64 {
    MeasureDDEProblem {
        p: func(Domain::half_line(0.0), "1"),
        g: Integrator::identity(),
        tau: 1.0,
        t0: 0.0,
        phi: func(Domain::new(-1.0, Some(0.0)), "1"),
        impulses: sched,
    }
}

fn constant_problem(c: f64) -> Problem64 {
    MeasureDDEProblem {
        p: func(Domain::half_line(0.0), &format!("{c:?}")),
        g: Integrator::identity(),
        tau: 1.0,
        t0: 0.0,
        phi: func(Domain::new(-1.0, Some(0.0)), "1"),
        impulses: ImpulseSchedule::empty(),
    }
}

fn quartic_window() -> Check {
    let clock = Instant::now();
    let prob = quartic_problem();
    ensure(prob.validate().is_empty(), || format!("{:?}", prob.validate()))?;
    let report = oscillation_criterion(&prob, 6.0, 30.0, 1.0).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed().as_secs_f64();
    // Antiderivative of 9 s^6 is 9 s^7 / 7.
    let oracle = 9.0 / 7.0 * (6f64.powi(7) - 4f64.powi(7));
    let (t, f6) = report.window_values[0];
    let rel = (f6 - oracle).abs() / oracle;
    ensure(t == 6.0, || format!("first window at {t}"))?;
    ensure(rel <= 1e-8, || format!("F(6) = {f6}, oracle {oracle}, rel {rel:e}"))?;
    ensure(report.verdict == Verdict::SatisfiedOnHorizon, || {
        format!("verdict {:?}", report.verdict)
    })?;
    ensure(elapsed < 5.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "F(6) = {f6:.6} (rel err {rel:.1e}), verdict {:?}, {elapsed:.2} s",
        report.verdict
    ))
}

fn inverse_square_windows() -> Check {
    let clock = Instant::now();
    let prob = inverse_square_problem();
    let report = nonoscillation_criterion(&prob, 3.0, 50.0, 0.25).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (t, f) in &report.window_values {
        worst = worst.max((f - 1.0 / (t * (t - 1.0))).abs());
    }
    ensure(worst <= 1e-9, || format!("max |F - 1/(t(t-1))| = {worst:e}"))?;
    ensure((report.sup_observed - 1.0 / 6.0).abs() <= 1e-9, || {
        format!("max F = {}", report.sup_observed)
    })?;
    ensure(report.sup_observed <= 1.0 / std::f64::consts::E, || "max F above 1/e".into())?;
    ensure(report.verdict == Verdict::SatisfiedOnHorizon, || {
        format!("verdict {:?}", report.verdict)
    })?;
    let cert = iterate_certificate(&prob, 4.0, 40.0, 30, 1e-10).map_err(|e| e.to_string())?;
    let res = cert.residual.unwrap_or(f64::INFINITY);
    ensure(cert.converged, || format!("certificate: {}", cert.message))?;
    ensure(res <= 1e-8, || format!("fixed-point residual {res:e}"))?;
    let elapsed = clock.elapsed().as_secs_f64();
    ensure(elapsed < 10.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "max |F - oracle| = {worst:.1e}, max F = {:.10}, certificate converged in {} iterates, residual {res:.1e}, {elapsed:.2} s",
        report.sup_observed, cert.iterations
    ))
}

/// Polynomial with coefficients in increasing degree.
#[derive(Clone, Debug)]
struct Poly(Vec<f64>);

impl Poly {
    fn random(rng: &mut ChaCha8Rng, max_degree: usize) -> Self {
        let d = rng.gen_range(0..=max_degree);
        Poly((0..=d).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    fn source(&self) -> String {
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| format!("({c:?})*t^{k}"))
            .collect::<Vec<_>>()
            .join(" + ")
    }

    fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let anti = |t: f64| {
            self.0
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        anti(b) - anti(a)
    }
}

struct QuadCase {
    f: Poly,
    f2: Poly,
    density: Poly,
    jumps: Vec<(f64, f64)>,
}

fn quad_cases() -> Vec<QuadCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    (0..50)
        .map(|i| {
            let mut pts: Vec<f64> = (0..rng.gen_range(0..=3))
                .map(|_| (rng.gen_range(0.0..5.0) * 64.0f64).round() / 64.0)
                .collect();
            // Endpoint conventions: a jump at the left end counts, at the right end it does not.
            if i == 0 {
                pts = vec![0.0, 5.0];
            }
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            QuadCase {
                f: Poly::random(&mut rng, 4),
                f2: Poly::random(&mut rng, 4),
                density: Poly::random(&mut rng, 3),
                jumps: pts
                    .into_iter()
                    .map(|s| (s, rng.gen_range(0.25..3.0) * if rng.gen() { 1.0 } else { -1.0 }))
                    .collect(),
            }
        })
        .collect()
}

fn integrator_of(case: &QuadCase) -> Integrator64 {
    Integrator::new(
        Density::Fn(func(Domain::half_line(-1.0), &case.density.source())),
        case.jumps.clone(),
        0.0,
        0.0,
    )
    .unwrap()
}

fn oracle(f: &Poly, case: &QuadCase, a: f64, b: f64) -> f64 {
    f.mul(&case.density).integral(a, b)
        + case
            .jumps
            .iter()
            .filter(|(s, _)| *s >= a && *s < b)
            .map(|(s, d)| f.eval(*s) * d)
            .sum::<f64>()
}

fn quadrature_suite() -> Check {
    let tol = 1e-10;
    let mut worst_rel = 0.0f64;
    let mut worst_add = 0.0f64;
    let mut worst_lin = 0.0f64;
    for (i, case) in quad_cases().iter().enumerate() {
        let g = integrator_of(case);
        let f = func(Domain::half_line(-1.0), &case.f.source());
        let r = integrate(&f, &g, 0.0, 5.0, tol).map_err(|e| format!("case {i}: {e}"))?;
        let exact = oracle(&case.f, case, 0.0, 5.0);
        let rel = (r.value - exact).abs() / exact.abs().max(1.0);
        worst_rel = worst_rel.max(rel);
        ensure(r.converged && rel <= 1e-9, || {
            format!("case {i}: {} vs oracle {exact} (rel {rel:e})", r.value)
        })?;

        // Additivity across an interior cut, which may sit on a jump.
        let cut = case.jumps.first().map_or(2.5, |j| j.0.clamp(0.0, 5.0));
        let left = integrate(&f, &g, 0.0, cut, tol).unwrap();
        let right = integrate(&f, &g, cut, 5.0, tol).unwrap();
        let gap = (left.value + right.value - r.value).abs();
        let budget = left.error_estimate + right.error_estimate + r.error_estimate;
        worst_add = worst_add.max(gap / budget.max(f64::MIN_POSITIVE));
        ensure(gap <= budget, || format!("case {i}: additivity gap {gap:e} > {budget:e}"))?;

        // Linearity.
        let (alpha, beta) = (1.5, -0.75);
        let combo = func(
            Domain::half_line(-1.0),
            &format!("1.5*({}) - 0.75*({})", case.f.source(), case.f2.source()),
        );
        let f2 = func(Domain::half_line(-1.0), &case.f2.source());
        let lc = integrate(&combo, &g, 0.0, 5.0, tol).unwrap();
        let r2 = integrate(&f2, &g, 0.0, 5.0, tol).unwrap();
        let gap = (lc.value - (alpha * r.value + beta * r2.value)).abs();
        let budget = lc.error_estimate + alpha.abs() * r.error_estimate + beta.abs() * r2.error_estimate;
        worst_lin = worst_lin.max(gap / budget.max(f64::MIN_POSITIVE));
        ensure(gap <= budget, || format!("case {i}: linearity gap {gap:e} > {budget:e}"))?;
    }
    Ok(format!(
        "50 cases, max rel err {worst_rel:.1e}, additivity/linearity gaps at most {:.2}x / {:.2}x the combined estimates",
        worst_add, worst_lin
    ))
}

fn null_set_invariance() -> Check {
    let tol = 1e-10;
    let mut worst = 0.0f64;
    for (i, case) in quad_cases().iter().enumerate() {
        let g = integrator_of(case);
        let plain = func(Domain::half_line(-1.0), &case.f.source());
        let marked = func(
            Domain::half_line(-1.0),
            &format!("({}) * ae_except_rationals", case.f.source()),
        );
        ensure(marked.has_null_exception(), || "marker lost".into())?;
        let a = integrate(&plain, &g, 0.0, 5.0, tol).unwrap();
        let b = integrate(&marked, &g, 0.0, 5.0, tol).unwrap();
        let diff = (a.value - b.value).abs();
        worst = worst.max(diff);
        ensure(diff <= a.error_estimate.max(b.error_estimate), || {
            format!("case {i}: changed by {diff:e}")
        })?;
    }
    Ok(format!("50 cases, largest change {worst:e}"))
}

fn dominated_convergence() -> Check {
    let base = func(Domain::half_line(0.0), "t^4");
    let full = integrate_dt(&base, 4.0, 6.0, 1e-12).unwrap().value;
    // ∫ s^4 e^{-ns} ds = -e^{-ns}(s^4/n + 4s^3/n^2 + 12s^2/n^3 + 24s/n^4 + 24/n^5).
    let closed = |n: f64| {
        let anti = |s: f64| {
            -(-n * s).exp()
                * (s.powi(4) / n
                    + 4.0 * s.powi(3) / n.powi(2)
                    + 12.0 * s * s / n.powi(3)
                    + 24.0 * s / n.powi(4)
                    + 24.0 / n.powi(5))
        };
        anti(6.0) - anti(4.0)
    };
    let mut gaps = Vec::new();
    for n in [1.0, 10.0, 100.0, 1000.0] {
        let fn_ = func(Domain::half_line(0.0), &format!("t^4 * (1 - exp(-{n:?}*t))"));
        let direct = (integrate_dt(&fn_, 4.0, 6.0, 1e-12).unwrap().value - full).abs();
        // The difference underflows against ∫ s^4 ≈ 1.35e3 for large n, so
        // the gap is integrated directly by linearity.
        let tail = func(Domain::half_line(0.0), &format!("t^4 * exp(-{n:?}*t)"));
        let gap = integrate_dt(&tail, 4.0, 6.0, 1e-300).unwrap();
        let oracle = closed(n);
        ensure((gap.value - oracle).abs() <= 1e-8 * oracle.abs() + gap.error_estimate, || {
            format!("n = {n}: gap {} vs closed form {oracle}", gap.value)
        })?;
        ensure((direct - gap.value).abs() <= 1e-9 * full, || {
            format!("n = {n}: direct difference {direct} disagrees with gap {}", gap.value)
        })?;
        gaps.push(gap.value);
    }
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), || format!("gaps {gaps:?}"))?;
    ensure(gaps[3] < 1e-3, || format!("gap at n = 1000 is {}", gaps[3]))?;
    Ok(format!(
        "gaps {:.3e}, {:.3e}, {:.3e}, {:.3e}",
        gaps[0], gaps[1], gaps[2], gaps[3]
    ))
}

fn solver_oracle() -> Check {
    let plain = unit_problem(ImpulseSchedule::empty());
    let y = solve(&plain, 2.0, 512).map_err(|e| e.to_string())?;
    let y1 = y.value_at(1.0).unwrap();
    ensure(y1.abs() <= 1e-6, || format!("y(1) = {y1}"))?;
    let r1 = residual(&plain, &y, 100).map_err(|e| e.to_string())?;
    ensure(r1 <= 1e-6, || format!("residual {r1:e}"))?;

    let kicked = unit_problem(ImpulseSchedule::new(vec![0.5], vec![0.5]));
    let z = solve(&kicked, 2.0, 512).map_err(|e| e.to_string())?;
    let z1 = z.value_at(1.0).unwrap();
    ensure((z1 - 0.25).abs() <= 1e-6, || format!("y(1) = {z1} with impulse"))?;
    ensure(z.post_jump_at(0.5) == Some(0.75), || format!("{:?}", z.post_jump()))?;
    let r2 = residual(&kicked, &z, 100).map_err(|e| e.to_string())?;
    ensure(r2 <= 1e-6, || format!("residual {r2:e} with impulse"))?;
    Ok(format!(
        "y(1) = {y1:.1e}, with impulse y(1) = {z1:.12}, residuals {r1:.1e} / {r2:.1e}"
    ))
}

fn transform_roundtrip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7_340_033);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(20..200);
        let mut grid: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
        grid.push(0.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let k = rng.gen_range(0..=4);
        let mut pts: Vec<f64> = (0..k).map(|_| grid[rng.gen_range(1..grid.len())]).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let bs: Vec<f64> = pts.iter().map(|_| rng.gen_range(-0.899..=5.0)).collect();
        let sched = ImpulseSchedule::new(pts, bs);
        let sign_mode = case % 3;
        let values: Vec<f64> = grid
            .iter()
            .map(|_| {
                let m = rng.gen_range(0.5..2.0);
                match sign_mode {
                    0 => m,
                    1 => -m,
                    _ => if rng.gen() { m } else { -m },
                }
            })
            .collect();
        let y = Trajectory::from_samples(0.0, 1.0, grid, values, &sched);
        let x = to_nonimpulsive(&y, &sched, 0.0).map_err(|e| e.to_string())?;
        let back = to_impulsive(&x, &sched, 0.0).map_err(|e| e.to_string())?;
        for (a, b) in y.values().iter().zip(back.values()).chain(y.right_limits().iter().zip(back.right_limits())) {
            let rel = (a - b).abs() / a.abs();
            worst = worst.max(rel);
            ensure(rel <= 1e-12, || format!("case {case}: {a} -> {b}"))?;
        }
        let cy = classify_trajectory(&y, 0.25, None).unwrap().verdict;
        let cx = classify_trajectory(&x, 0.25, None).unwrap().verdict;
        ensure(cy == cx, || format!("case {case}: {cy:?} vs {cx:?}"))?;
    }

    // Solver output: continuity after removing the impulses.
    let mut prob = constant_problem(0.3);
    prob.impulses = ImpulseSchedule::new(vec![1.3, 2.0, 4.75], vec![0.5, 4.0, -0.8]);
    let y = solve(&prob, 8.0, 256).map_err(|e| e.to_string())?;
    let x = to_nonimpulsive(&y, &prob.impulses, prob.t0).map_err(|e| e.to_string())?;
    let mut worst_jump = 0.0f64;
    for (t, _) in y.post_jump() {
        let i = y.node_index(*t).unwrap();
        let rel = (x.right_limits()[i] - x.values()[i]).abs() / x.values()[i].abs();
        worst_jump = worst_jump.max(rel);
        ensure(rel <= 1e-9, || format!("jump at {t}: relative {rel:e}"))?;
    }
    ensure(y.post_jump().len() == 3, || "missing impulses".into())?;
    let cy = classify_trajectory(&y, 0.25, None).unwrap().verdict;
    let cx = classify_trajectory(&x, 0.25, None).unwrap().verdict;
    ensure(cy == cx, || format!("solver output: {cy:?} vs {cx:?}"))?;
    Ok(format!(
        "100 roundtrips, max rel err {worst:.1e}; solver output jump ratio {worst_jump:.1e}, verdict {cy:?} on both sides"
    ))
}

fn scalar_fixed_point(c: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid < c * mid.exp() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn monotone_certificate() -> Check {
    let quarter_e = 1.0 / (4.0 * std::f64::consts::E);
    let mut notes = Vec::new();
    for c in [0.05, quarter_e, 0.3] {
        let cert = iterate_certificate(&constant_problem(c), 1.0, 61.0, 60, 1e-12)
            .map_err(|e| e.to_string())?;
        for w in cert.iterates.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            for (k, v) in next.values.iter().enumerate() {
                let old = prev.values[next.start - prev.start + k];
                ensure(*v >= old - 1e-14 * old.abs(), || {
                    format!("c = {c}: u_(k+1) < u_k at {}", cert.grid[next.start + k])
                })?;
            }
        }
        ensure(cert.converged, || format!("c = {c}: {}", cert.message))?;
        let last = cert.iterates.last().unwrap();
        let u = last.values[last.values.len() - 1];
        let oracle = scalar_fixed_point(c);
        ensure((u - oracle).abs() <= 1e-6, || format!("c = {c}: limit {u} vs {oracle}"))?;
        notes.push(format!("c={c:.4}: {} iterates, u={u:.7}", cert.iterations));
    }
    let bad = iterate_certificate(&constant_problem(0.5), 1.0, 61.0, 60, 1e-12)
        .map_err(|e| e.to_string())?;
    ensure(bad.diverged && !bad.converged, || {
        format!("c = 0.5 not flagged: {}", bad.message)
    })?;
    Ok(format!(
        "{}; c=0.5 flagged divergent after {} iterates",
        notes.join(", "),
        bad.iterations
    ))
}

fn sign_flip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut count = 0;
    for case in 0..12 {
        let mut prob = constant_problem(rng.gen_range(0.01..0.3));
        let horizon = 10.0;
        let tk = (rng.gen_range(8.0..9.8) * 16.0f64).round() / 16.0;
        let b = rng.gen_range(-6.0..-1.05);
        let mut pts = vec![tk];
        let mut bs = vec![b];
        if case % 2 == 0 {
            pts.insert(0, 3.0);
            bs.insert(0, rng.gen_range(-0.5..2.0));
        }
        prob.impulses = ImpulseSchedule::new(pts, bs);
        let y = solve(&prob, horizon, 64).map_err(|e| e.to_string())?;
        let i = y.node_index(tk).unwrap();
        let (left, right) = (y.values()[i], y.post_jump_at(tk).unwrap());
        ensure(left != 0.0, || format!("case {case}: y(t_k) = 0"))?;
        ensure(left * right < 0.0, || format!("case {case}: {left} -> {right}"))?;
        let v = classify_trajectory(&y, 0.25, None).unwrap().verdict;
        ensure(v == SignVerdict::OscillatoryOnHorizon, || format!("case {case}: {v:?}"))?;
        count += 1;
    }
    Ok(format!("{count} problems with b_k < -1: sign flips and OscillatoryOnHorizon"))
}

fn main() -> ExitCode {
    let checks: [(&str, CheckFn); 9] = [
        ("quartic example window value and verdict", quartic_window),
        ("inverse-square example windows and certificate", inverse_square_windows),
        ("quadrature oracle suite", quadrature_suite),
        ("null-set invariance", null_set_invariance),
        ("dominated convergence", dominated_convergence),
        ("solver hand oracle", solver_oracle),
        ("transform roundtrip", transform_roundtrip),
        ("monotone certificate", monotone_certificate),
        ("sign-flip shortcut", sign_flip),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        match outcome {
            Ok(detail) => println!("PASS  criterion {}: {name} -- {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {}: {name} -- {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
