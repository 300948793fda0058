//! End-to-end runs through the public API.

use approx::assert_relative_eq;
use mdde_core::criteria::SignVerdict;
use mdde_core::*;

fn f64_fn(start: f64, end: Option<f64>, src: &str) -> RegulatedFn64 {
    RegulatedFn::from_expr(Domain::new(start, end), parse(src).unwrap()).unwrap()
}

fn f32_fn(start: f32, end: Option<f32>, src: &str) -> RegulatedFn32 {
    RegulatedFn::from_expr(Domain::new(start, end), parse(src).unwrap()).unwrap()
}

fn constant_delay(c: f64) -> Problem64 {
    MeasureDDEProblem {
        p: f64_fn(0.0, None, &format!("{c:?}")),
        g: Integrator::identity(),
        tau: 1.0,
        t0: 0.0,
        phi: f64_fn(-1.0, Some(0.0), "1"),
        impulses: ImpulseSchedule::empty(),
    }
}

#[test]
fn single_and_double_precision_agree() {
    let p32: Problem32 = MeasureDDEProblem {
        p: f32_fn(0.0, None, "0.5"),
        g: Integrator::identity(),
        tau: 1.0,
        t0: 0.0,
        phi: f32_fn(-1.0, Some(0.0), "1"),
        impulses: ImpulseSchedule::new(vec![1.5], vec![0.25]),
    };
    let mut p64 = constant_delay(0.5);
    p64.impulses = ImpulseSchedule::new(vec![1.5], vec![0.25]);
    let y32 = solve(&p32, 4.0, 64).unwrap();
    let y64 = solve(&p64, 4.0, 64).unwrap();
    for t in [0.5, 1.5, 2.25, 4.0] {
        let a = y32.value_at(t as f32).unwrap() as f64;
        let b = y64.value_at(t).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-5, max_relative = 1e-5);
    }
}

#[test]
fn small_coefficient_gives_positive_solution_and_certificate() {
    // c = 0.2 < 1/e: the equation has a positive solution.
    let prob = constant_delay(0.2);
    let report = nonoscillation_criterion(&prob, 1.0, 20.0, 0.5).unwrap();
    assert_eq!(report.verdict, Verdict::SatisfiedOnHorizon);
    let cert = iterate_certificate(&prob, 1.0, 30.0, 60, 1e-11).unwrap();
    assert!(cert.converged && cert.monotone, "{}", cert.message);
    let y = solve(&prob, 30.0, 128).unwrap();
    let class = classify_trajectory(&y, 0.5, None).unwrap();
    assert_eq!(class.verdict, SignVerdict::EventuallyPositive);
}

#[test]
fn large_coefficient_oscillates() {
    // c = 1.5 > 1 gives F = 1.5 on every window.
    let prob = constant_delay(1.5);
    let report = oscillation_criterion(&prob, 1.0, 20.0, 1.0).unwrap();
    assert_eq!(report.verdict, Verdict::SatisfiedOnHorizon);
    assert_relative_eq!(report.sup_observed, 1.5, max_relative = 1e-12);
    let y = solve(&prob, 40.0, 128).unwrap();
    let class = classify_trajectory(&y, 0.5, None).unwrap();
    assert_eq!(class.verdict, SignVerdict::OscillatoryOnHorizon);
}

#[test]
fn reports_serialize() {
    let prob = constant_delay(0.2);
    let text = serde_json::to_string(&prob).unwrap();
    assert!(text.contains("\"tau\":1.0"));
    let report = nonoscillation_criterion(&prob, 1.0, 3.0, 1.0).unwrap();
    let doc: serde_json::Value = serde_json::to_value(&report).unwrap();
    assert_eq!(doc["verdict"], "SatisfiedOnHorizon");
    assert_eq!(doc["window_values"].as_array().unwrap().len(), 3);
    let y = solve(&prob, 2.0, 8).unwrap();
    let doc = serde_json::to_value(&y).unwrap();
    assert_eq!(doc["grid"].as_array().unwrap().len(), y.grid().len());
}

#[test]
fn nonimpulsive_form_matches_solver() {
    let mut prob = constant_delay(0.3);
    prob.impulses = ImpulseSchedule::new(vec![0.5, 2.25], vec![1.0, -0.5]);
    let opts = SolveOptions::default();
    let y = solve_with(&prob, 5.0, &opts).unwrap();
    let x = NonimpulsiveProblem::new(&prob, 0.0).unwrap().solve(5.0, &opts).unwrap();
    let back = to_impulsive(&x, &prob.impulses, 0.0).unwrap();
    for t in [0.25, 1.0, 2.25, 3.7, 5.0] {
        assert_relative_eq!(
            back.value_at(t).unwrap(),
            y.value_at(t).unwrap(),
            epsilon = y.meta().tolerance + x.meta().tolerance
        );
    }
}
