//! Report files. Every file is written to a temporary sibling and renamed into
//! place, so a reader never sees a half-written report.

use std::io::Write;
use std::path::{Path, PathBuf};

use mdde_core::criteria::Classification;
use mdde_core::solver::SolveMeta;
use mdde_core::{Certificate64, CriterionReport64, Trajectory64};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::failure::Failure;

/// Version of the emitted report documents; see `schema/report.schema.json`.
pub const REPORT_VERSION: u32 = 1;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| Failure::missing(format!("cannot write {}: {e}", path.display()));
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    // Temporary files are created owner-only; reports are ordinary files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(fail)?;
    }
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, doc: &S) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(doc)
        .map_err(|e| Failure::numeric(format!("cannot serialize report: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Failure::numeric(format!("cannot format {}: {e}", path.display())))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::numeric(format!("cannot format {}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

/// Output locations for one run.
#[derive(Debug, Clone)]
pub struct Sink {
    pub dir: PathBuf,
    pub stem: String,
}

impl Sink {
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.stem))
    }
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    y: f64,
    is_impulse: u8,
    y_post: f64,
}

#[derive(Serialize)]
pub struct TrajectoryDoc<'a> {
    pub schema_version: u32,
    pub kind: &'static str,
    pub t0: f64,
    pub tau: f64,
    pub horizon: f64,
    pub meta: SolveMeta<f64>,
    pub residual: f64,
    pub residual_probes: usize,
    pub seed: u64,
    pub classification: Classification<f64>,
    pub t: &'a [f64],
    pub y: &'a [f64],
    pub is_impulse: Vec<bool>,
    /// Right limit at every node; differs from `y` only at jumps.
    pub y_post: &'a [f64],
}

impl<'a> TrajectoryDoc<'a> {
    pub fn new(
        traj: &'a Trajectory64,
        impulse_at: impl Fn(f64) -> bool,
        residual: f64,
        residual_probes: usize,
        seed: u64,
        classification: Classification<f64>,
    ) -> Self {
        TrajectoryDoc {
            schema_version: REPORT_VERSION,
            kind: "trajectory",
            t0: traj.t0(),
            tau: traj.tau(),
            horizon: traj.horizon(),
            meta: *traj.meta(),
            residual,
            residual_probes,
            seed,
            classification,
            t: traj.grid(),
            y: traj.values(),
            is_impulse: traj.grid().iter().map(|t| impulse_at(*t)).collect(),
            y_post: traj.right_limits(),
        }
    }
}

/// `t,y,is_impulse,y_post`, one row per node.
pub fn trajectory_files(sink: &Sink, doc: &TrajectoryDoc<'_>) -> Result<Vec<PathBuf>, Failure> {
    let csv_path = sink.path("trajectory.csv");
    let rows = (0..doc.t.len()).map(|i| TrajectoryRow {
        t: doc.t[i],
        y: doc.y[i],
        is_impulse: doc.is_impulse[i] as u8,
        y_post: doc.y_post[i],
    });
    write_csv(&csv_path, rows)?;
    let json_path = sink.path("trajectory.json");
    write_json(&json_path, doc)?;
    Ok(vec![csv_path, json_path])
}

#[derive(Serialize)]
pub struct CriterionDoc<'a> {
    pub schema_version: u32,
    pub kind: &'static str,
    pub report: &'a CriterionReport64,
}

#[derive(Serialize)]
struct WindowRow {
    t: f64,
    #[serde(rename = "F")]
    f: f64,
    error: f64,
}

/// `t,F,error` rows for a criterion report.
pub fn criterion_files(sink: &Sink, mode: &str, report: &CriterionReport64) -> Result<Vec<PathBuf>, Failure> {
    let json_path = sink.path(&format!("{mode}.json"));
    write_json(
        &json_path,
        &CriterionDoc {
            schema_version: REPORT_VERSION,
            kind: "criterion",
            report,
        },
    )?;
    let csv_path = sink.path(&format!("{mode}.csv"));
    let rows = report
        .window_values
        .iter()
        .zip(&report.window_errors)
        .map(|((t, f), e)| WindowRow { t: *t, f: *f, error: *e });
    write_csv(&csv_path, rows)?;
    Ok(vec![csv_path, json_path])
}

#[derive(Serialize)]
pub struct CertificateDoc<'a> {
    pub schema_version: u32,
    pub kind: &'static str,
    pub certificate: &'a Certificate64,
}

#[derive(Serialize)]
struct IterateRow {
    k: usize,
    t: f64,
    u: f64,
}

/// Long format `k,t,u`: one row per iterate and grid point of its domain.
pub fn certificate_files(sink: &Sink, cert: &Certificate64) -> Result<Vec<PathBuf>, Failure> {
    let json_path = sink.path("certificate.json");
    write_json(
        &json_path,
        &CertificateDoc {
            schema_version: REPORT_VERSION,
            kind: "certificate",
            certificate: cert,
        },
    )?;
    let csv_path = sink.path("certificate.csv");
    let rows = cert.iterates.iter().enumerate().flat_map(|(k, it)| {
        it.values
            .iter()
            .enumerate()
            .map(move |(j, u)| IterateRow { k, t: cert.grid[it.start + j], u: *u })
    });
    write_csv(&csv_path, rows)?;
    Ok(vec![csv_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        write_csv(&path, [WindowRow { t: 1.0, f: 0.5, error: 0.0 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "t,F,error\n1.0,0.5,0.0\n");
    }
}
