//! Problem config files: a JSON document, `schema_version` 1.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "problem": {
//!     "p": "1/t^2",
//!     "g": { "density": "1", "jumps": [[3.0, 0.5]] },
//!     "tau": 1.0,
//!     "t0": 2.0,
//!     "phi": "1",
//!     "impulses": { "points": [2.5], "b": [0.5] }
//!   },
//!   "run": { "horizon": 50.0, "T": 3.0 },
//!   "output": { "dir": "out" }
//! }
//! ```
//!
//! A function is either an expression string, defined on its default
//! domain, or `{ "domain": {"start": a, "end": b}, "pieces": [{"from": a, "expr": "..."}] }`
//! where `"end": null` means unbounded.

use std::path::{Path, PathBuf};

use mdde_core::stieltjes::Density;
use mdde_core::{parse, Domain, ImpulseSchedule, Integrator, MeasureDDEProblem, Problem64, RegulatedFn64};
use serde::Deserialize;

use crate::failure::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[allow(dead_code)] // checked before typed decoding
    pub schema_version: u32,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub p: FnSpec,
    #[serde(default)]
    pub g: Option<IntegratorSpec>,
    pub tau: f64,
    pub t0: f64,
    #[serde(default)]
    pub phi: Option<FnSpec>,
    #[serde(default)]
    pub impulses: Option<ImpulseSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FnSpec {
    Expr(String),
    Piecewise {
        #[serde(default)]
        domain: Option<DomainSpec>,
        pieces: Vec<PieceSpec>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub from: f64,
    pub expr: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub density: Option<FnSpec>,
    #[serde(default)]
    pub jumps: Vec<(f64, f64)>,
    /// `[t, g(t)]`; only shifts `g`, never the integrals.
    #[serde(default)]
    pub base: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    #[serde(default)]
    pub points: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub first: f64,
    pub period: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: Option<f64>,
    #[serde(rename = "T")]
    pub start: Option<f64>,
    pub stride: Option<f64>,
    pub kmax: Option<usize>,
    pub tol: Option<f64>,
    pub samples_per_step: Option<usize>,
    pub seed: Option<u64>,
    pub probes: Option<usize>,
    pub tail_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    /// File name stem; defaults to the config file stem.
    pub name: Option<String>,
}

/// Reads and type-checks a config. Structural errors name the JSON path.
pub fn load(path: &Path) -> Result<ProblemConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::missing(format!("cannot read {}: {e}", path.display())))?;
    from_str(&text)
}

pub fn from_str(text: &str) -> Result<ProblemConfig, Failure> {
    let raw: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Failure::invalid(format!("config is not valid JSON: {e}")))?;
    match raw.get("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => {
            return Err(Failure::invalid(format!(
                "schema_version: unsupported value {v}, expected {SCHEMA_VERSION}"
            )))
        }
        None => return Err(Failure::invalid("schema_version: missing field")),
    }
    serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        Failure::invalid(format!("{path}: {}", e.into_inner()))
    })
}

impl FnSpec {
    fn build(&self, field: &str, default: Domain<f64>) -> Result<RegulatedFn64, Failure> {
        let expr = |src: &str, at: &str| {
            parse(src).map_err(|e| Failure::invalid(format!("{at}: {e}")))
        };
        let (domain, pieces) = match self {
            FnSpec::Expr(src) => (default, vec![(default.start, expr(src, field)?)]),
            FnSpec::Piecewise { domain, pieces } => {
                let domain = domain.map_or(default, |d| Domain::new(d.start, d.end));
                let mut out = Vec::with_capacity(pieces.len());
                for (i, piece) in pieces.iter().enumerate() {
                    out.push((piece.from, expr(&piece.expr, &format!("{field}.pieces[{i}].expr"))?));
                }
                (domain, out)
            }
        };
        RegulatedFn64::new(domain, pieces).map_err(|e| Failure::invalid(format!("{field}: {e}")))
    }
}

impl ProblemSpec {
    /// Builds the problem. `p` and the density of `g` default to `[t0, ∞)`,
    /// `phi` to `[t0 - tau, t0]` and to the constant 1 when absent.
    pub fn build(&self) -> Result<Problem64, Failure> {
        for (name, x) in [("problem.tau", self.tau), ("problem.t0", self.t0)] {
            if !x.is_finite() {
                return Err(Failure::invalid(format!("{name}: must be finite")));
            }
        }
        let tail = Domain::half_line(self.t0);
        let p = self.p.build("problem.p", tail)?;
        let history = Domain::new(self.t0 - self.tau, Some(self.t0));
        let phi = match &self.phi {
            Some(f) => f.build("problem.phi", history)?,
            None => RegulatedFn64::constant(history, 1.0),
        };
        let g = match &self.g {
            None => Integrator::identity(),
            Some(spec) => {
                let density = match &spec.density {
                    None => Density::Unit,
                    Some(FnSpec::Expr(s)) if s.trim() == "1" => Density::Unit,
                    Some(FnSpec::Expr(s)) if s.trim() == "0" => Density::Zero,
                    Some(f) => Density::Fn(f.build("problem.g.density", tail)?),
                };
                let (bp, bv) = spec.base.unwrap_or((self.t0, 0.0));
                Integrator::new(density, spec.jumps.clone(), bp, bv)
                    .map_err(|e| Failure::invalid(format!("problem.g.jumps: {e}")))?
            }
        };
        let impulses = match &self.impulses {
            None => ImpulseSchedule::empty(),
            Some(spec) => {
                let s = ImpulseSchedule::new(spec.points.clone(), spec.b.clone());
                match spec.generator {
                    Some(gen) => s.with_generator(gen.first, gen.period, gen.b),
                    None => s,
                }
            }
        };
        let prob = MeasureDDEProblem {
            p,
            g,
            tau: self.tau,
            t0: self.t0,
            phi,
            impulses,
        };
        let violations = prob.validate();
        if violations.is_empty() {
            Ok(prob)
        } else {
            Err(Failure::invalid(
                violations
                    .iter()
                    .map(|v| format!("problem.{v}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::failure::INVALID;
    use mdde_core::Regulated;

    fn base(extra: &str) -> String {
        format!(
            r#"{{"schema_version": 1, "problem": {{"p": "1/t^2", "tau": 1, "t0": 2{extra}}}}}"#
        )
    }

    #[test]
    fn minimal_config_defaults() {
        let cfg = from_str(&base("")).unwrap();
        let prob = cfg.problem.build().unwrap();
        assert!(prob.g.is_identity());
        assert!(prob.impulses.is_empty());
        assert_eq!(prob.phi.domain(), Domain::new(1.0, Some(2.0)));
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = from_str(&base(r#", "impulses": {"points": [3], "bb": [1]}"#)).unwrap_err();
        assert_eq!(err.code, INVALID);
        assert!(err.message.starts_with("problem.impulses"), "{}", err.message);
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = from_str(&base(r#", "impulses": {"points": ["x"], "b": [1]}"#)).unwrap_err();
        assert!(err.message.starts_with("problem.impulses.points[0]"), "{}", err.message);
    }

    #[test]
    fn version_checked() {
        let err = from_str(r#"{"schema_version": 7, "problem": {}}"#).unwrap_err();
        assert!(err.message.contains("schema_version"));
        assert!(from_str(r#"{"problem": {}}"#).is_err());
    }

    #[test]
    fn parse_error_has_position() {
        let cfg = from_str(
            r#"{"schema_version": 1, "problem": {"p": {"pieces": [{"from": 2, "expr": "1"}, {"from": 4, "expr": "t +"}]}, "tau": 1, "t0": 2}}"#,
        )
        .unwrap();
        let err = cfg.problem.build().unwrap_err();
        assert!(err.message.starts_with("problem.p.pieces[1].expr: line 1, column"), "{}", err.message);
    }

    #[test]
    fn forbidden_magnitude_names_rule() {
        let cfg = from_str(&base(r#", "impulses": {"points": [3], "b": [-1]}"#)).unwrap();
        let err = cfg.problem.build().unwrap_err();
        assert!(err.message.contains("problem.impulses.b[0]"), "{}", err.message);
        assert!(err.message.contains("b_k = -1 forbidden"));
    }

    #[test]
    fn piecewise_function() {
        let cfg = from_str(
            r#"{"schema_version": 1, "problem": {"p": {"domain": {"start": 2}, "pieces": [{"from": 2, "expr": "0"}, {"from": 4, "expr": "t"}]}, "tau": 1, "t0": 2}}"#,
        )
        .unwrap();
        let prob = cfg.problem.build().unwrap();
        assert_eq!(prob.p.breakpoints(), &[4.0]);
    }
}
