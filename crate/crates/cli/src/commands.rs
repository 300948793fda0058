use std::path::{Path, PathBuf};

use mdde_core::criteria::{CriteriaError, DEFAULT_TAIL_FRACTION};
use mdde_core::solver::{residual_seeded, SolveError, RESIDUAL_SEED};
use mdde_core::regulated::FnError;
use mdde_core::stieltjes::{QuadError, DEFAULT_TOL};
use mdde_core::{
    classify_trajectory, integrate, iterate_certificate, nonoscillation_criterion,
    oscillation_criterion, solve_with, Problem64, SolveOptions,
};

use crate::config::{self, ProblemConfig};
use crate::failure::Failure;
use crate::output::{self, Sink, TrajectoryDoc};

pub const DEFAULT_PROBES: usize = 100;
pub const DEFAULT_KMAX: usize = 30;
pub const DEFAULT_CERT_TOL: f64 = 1e-10;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Oscillation,
    Nonoscillation,
    Certificate,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Oscillation => "oscillation",
            Mode::Nonoscillation => "nonoscillation",
            Mode::Certificate => "certificate",
        }
    }
}

struct Loaded {
    cfg: ProblemConfig,
    prob: Problem64,
    sink: Sink,
}

fn load(path: &Path, ov: &Overrides) -> Result<Loaded, Failure> {
    let cfg = config::load(path)?;
    let prob = cfg.problem.build()?;
    let stem = cfg.output.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| "mdde".into(), |s| s.to_string_lossy().into_owned())
    });
    let dir = ov
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded {
        cfg,
        prob,
        sink: Sink { dir, stem },
    })
}

fn horizon(l: &Loaded, ov: &Overrides) -> Result<f64, Failure> {
    ov.horizon
        .or(l.cfg.run.horizon)
        .ok_or_else(|| Failure::invalid("run.horizon: missing (set it in the config or pass --horizon)"))
}

fn solve_failure(e: SolveError) -> Failure {
    match e {
        SolveError::Invalid(_) | SolveError::Horizon { .. } | SolveError::Samples => {
            Failure::invalid(e.to_string())
        }
        _ => Failure::numeric(e.to_string()),
    }
}

fn criteria_failure(e: CriteriaError) -> Failure {
    match e {
        CriteriaError::Invalid(_) | CriteriaError::Hypothesis { .. } | CriteriaError::Argument(_) => {
            Failure::invalid(e.to_string())
        }
        CriteriaError::Quad { .. } | CriteriaError::Problem(_) => Failure::numeric(e.to_string()),
    }
}

fn quad_failure(e: QuadError) -> Failure {
    match e {
        QuadError::BadTolerance(_)
        | QuadError::OutsideDomain { .. }
        | QuadError::Fn(FnError::InvalidInterval { .. }) => {
            Failure::invalid(e.to_string())
        }
        _ => Failure::numeric(e.to_string()),
    }
}

fn list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

/// Solves on `[t0, horizon]` and writes the trajectory files.
pub fn solve(path: &Path, ov: &Overrides) -> Result<String, Failure> {
    let l = load(path, ov)?;
    let run = &l.cfg.run;
    let horizon = horizon(&l, ov)?;
    let opts = SolveOptions {
        samples_per_step: run.samples_per_step.unwrap_or(SolveOptions::<f64>::default().samples_per_step),
        quad_tol: ov.tol.or(run.tol).unwrap_or(DEFAULT_TOL),
    };
    let traj = solve_with(&l.prob, horizon, &opts).map_err(solve_failure)?;
    let probes = run.probes.unwrap_or(DEFAULT_PROBES);
    let seed = run.seed.unwrap_or(RESIDUAL_SEED);
    let res = residual_seeded(&l.prob, &traj, probes, seed).map_err(solve_failure)?;
    let class = classify_trajectory(&traj, run.tail_fraction.unwrap_or(DEFAULT_TAIL_FRACTION), None)
        .map_err(criteria_failure)?;
    let sched = &l.prob.impulses;
    let doc = TrajectoryDoc::new(&traj, |t| sched.b_at(t).is_some(), res, probes, seed, class);
    let files = output::trajectory_files(&l.sink, &doc)?;
    Ok(format!(
        "solved on [{}, {horizon}] with {} nodes: residual {res:.3e} (tolerance {:.3e}), tail {:?}; wrote {}",
        l.prob.t0,
        traj.grid().len(),
        traj.meta().tolerance,
        class.verdict,
        list(&files)
    ))
}

/// Runs one criterion or the certificate iteration and writes its report.
pub fn check(path: &Path, mode: Mode, ov: &Overrides) -> Result<String, Failure> {
    let l = load(path, ov)?;
    let run = &l.cfg.run;
    let horizon = horizon(&l, ov)?;
    let start = run.start.unwrap_or(l.prob.t0 + l.prob.tau);
    match mode {
        Mode::Oscillation | Mode::Nonoscillation => {
            let stride = run.stride.unwrap_or(l.prob.tau / 4.0);
            let report = if mode == Mode::Oscillation {
                oscillation_criterion(&l.prob, start, horizon, stride)
            } else {
                nonoscillation_criterion(&l.prob, start, horizon, stride)
            }
            .map_err(criteria_failure)?;
            let files = output::criterion_files(&l.sink, mode.name(), &report)?;
            Ok(format!(
                "{}: {:?} (sup F = {:.10e} at t = {}, threshold {:.6}, margin {:.1e}); wrote {}",
                mode.name(),
                report.verdict,
                report.sup_observed,
                report.sup_at,
                report.threshold,
                report.margin,
                list(&files)
            ))
        }
        Mode::Certificate => {
            let kmax = run.kmax.unwrap_or(DEFAULT_KMAX);
            let tol = ov.tol.or(run.tol).unwrap_or(DEFAULT_CERT_TOL);
            let cert = iterate_certificate(&l.prob, start, horizon, kmax, tol).map_err(criteria_failure)?;
            let files = output::certificate_files(&l.sink, &cert)?;
            let residual = cert.residual.map_or("n/a".into(), |r| format!("{r:.3e}"));
            Ok(format!(
                "certificate: converged={} diverged={} after {} iterates (gap {:.3e}, residual {residual}); wrote {}",
                cert.converged,
                cert.diverged,
                cert.iterations,
                cert.sup_gap,
                list(&files)
            ))
        }
    }
}

/// `∫_[a,b) p dg` with its error estimate.
pub fn quad(path: &Path, a: f64, b: f64, ov: &Overrides) -> Result<String, Failure> {
    let l = load(path, ov)?;
    let tol = ov.tol.or(l.cfg.run.tol).unwrap_or(DEFAULT_TOL);
    let r = integrate(&l.prob.p, &l.prob.g, a, b, tol).map_err(quad_failure)?;
    let line = format!(
        "integral of p dg over [{a}, {b}) = {:.15e} +- {:.3e} ({} panels)",
        r.value, r.error_estimate, r.panels_used
    );
    if r.converged {
        Ok(line)
    } else {
        Err(Failure::numeric(format!("{line}; tolerance {tol:e} not reached")))
    }
}
