//! Subcommand implementations. Each returns the process exit code and writes
//! its report to `out`; failures are described on `err`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cli::config::RunConfig;
use crate::cli::series::{read_series, DiskObserver};
use crate::cli::snapshot::{read_snapshot, write_snapshot};
use crate::diagnostics::{check_pointwise_e1, fit_decay_exponent, scattering_profile, Column};
use crate::dynamics::initial_data;
use crate::error::Error;
use crate::geometry::{dot, jets, point_curvature, point_frame, point_metric, tangent};
use crate::grid::{Field, GridSpec};
use crate::integrator::{run, RunSpec, Status};
use crate::oracle::{compare, fd_geometry, Quantity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER_ERROR: i32 = 1;
pub const EXIT_BLOWN_UP: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

/// Exit code for an error that aborted a command before it could finish.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config { .. }
        | Error::Format { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::InsufficientSamples { .. } => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::SingularMetric { .. } => EXIT_SOLVER_ERROR,
    }
}

fn fail(err: &mut dyn Write, e: &Error) -> i32 {
    let _ = writeln!(err, "error: {e}");
    exit_code(e)
}

pub fn initial_state(config: &RunConfig) -> crate::Result<Field> {
    initial_state_on(config, config.grid)
}

fn initial_state_on(config: &RunConfig, spec: GridSpec) -> crate::Result<Field> {
    let i = &config.init;
    initial_data(spec, i.kind, i.amplitude, i.width, i.modulation, i.seed)
}

/// Evolves the configured initial state, streaming `series.csv` and
/// snapshots into the output directory.
pub fn cmd_run(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let initial = match initial_state(config) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: initial data: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = config.output_dir();
    let mut observer = match DiskObserver::create(&dir, &config.output.series_name, &config.output.snapshot_prefix) {
        Ok(o) => o,
        Err(e) => return fail(err, &e),
    };
    let spec = RunSpec {
        initial,
        mode: config.solver.mode,
        control: config.solver.control,
        t_end: config.solver.t_end,
        sample_dt: config.diagnostics.sample_dt,
        snapshot_times: config.diagnostics.snapshot_times.clone(),
        plan: config.diagnostics.plan,
    };
    let state = match run(&spec, &mut observer) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: run aborted after {} rows: {e}", observer.rows);
            return match e {
                Error::Io { .. } => EXIT_IO,
                _ => EXIT_SOLVER_ERROR,
            };
        }
    };
    let _ = writeln!(
        out,
        "status={} t={} steps={} rows={} snapshots={} series={}",
        state.status.name(),
        state.t,
        state.step_count,
        observer.rows,
        observer.snapshots.len(),
        observer.series_path().display()
    );
    match state.status {
        Status::Finished => EXIT_OK,
        Status::BlownUp { quantity, value } => {
            let _ = writeln!(err, "blown up: {quantity} = {value} at t = {}", state.t);
            EXIT_BLOWN_UP
        }
        Status::Error(msg) => {
            let _ = writeln!(err, "error: solver stopped at t = {}: {msg}", state.t);
            EXIT_SOLVER_ERROR
        }
        Status::Running => EXIT_SOLVER_ERROR,
    }
}

pub fn cmd_decay_fit(
    series_path: &Path,
    t_lo: f64,
    t_hi: f64,
    column: Column,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let fit = read_series(series_path).and_then(|s| fit_decay_exponent(&s, t_lo, t_hi, column));
    match fit {
        Ok(f) => {
            let _ = writeln!(out, "slope={} stderr={} n={}", f.slope, f.stderr, f.samples);
            EXIT_OK
        }
        Err(e) => fail(err, &e),
    }
}

/// Pulls the snapshots back by the free flow, prints their pairwise `H²`
/// distances and writes the latest pulled-back state to `phi_plus_path`.
pub fn cmd_scatter(paths: &[PathBuf], phi_plus_path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut snaps = Vec::with_capacity(paths.len());
    for p in paths {
        match read_snapshot(p) {
            Ok((t, f)) if f.is_finite() => snaps.push((t, f)),
            Ok(_) => {
                let _ = writeln!(err, "error: {} holds non-finite values", p.display());
                return EXIT_CONFIG;
            }
            Err(e) => return fail(err, &e),
        }
    }
    snaps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let profile = match scattering_profile(&snaps) {
        Ok(p) => p,
        Err(e) => return fail(err, &e),
    };
    for i in 0..profile.times.len() {
        for j in i + 1..profile.times.len() {
            let _ = writeln!(
                out,
                "t_a={} t_b={} h2_distance={:e}",
                profile.times[i], profile.times[j], profile.cauchy[i][j]
            );
        }
    }
    if let Err(e) = write_snapshot(phi_plus_path, profile.phi_plus(), 0.0) {
        return fail(err, &e);
    }
    let _ = writeln!(out, "phi_plus={}", phi_plus_path.display());
    EXIT_OK
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn pass(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// Pointwise identities of the geometry at every grid point. The field
/// must be finite.
pub fn geometry_checks(field: &Field) -> crate::Result<Vec<CheckLine>> {
    let js = jets(field);
    let d = field.spec().d();
    // [orthonormal, normal, complex structure, H normal, metric inverse]
    let worst = js
        .par_iter()
        .map(|j| {
            let frame = point_frame(j);
            let metric = point_metric(j);
            let curv = point_curvature(j, &frame, &metric);
            let nus = [frame.nu1, frame.nu2];
            let mut w = [0.0f64; 5];
            for a in 0..2 {
                for b in 0..2 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    w[0] = w[0].max((dot(&nus[a], &nus[b]) - delta).abs());
                }
            }
            let h_norm = dot(&curv.mean, &curv.mean).sqrt();
            for i in 0..d {
                let t = tangent(j, i);
                let scale = 1.0 + dot(&t, &t).sqrt();
                for nu in &nus {
                    w[1] = w[1].max(dot(nu, &t).abs() / scale);
                }
                w[3] = w[3].max(dot(&curv.mean, &t).abs() / (scale * (1.0 + h_norm)));
            }
            let jh2 = dot(&curv.skew, &curv.skew);
            w[2] = (dot(&curv.skew, &curv.mean).abs().max((jh2 - h_norm * h_norm).abs())) / (1.0 + h_norm * h_norm);
            for r in 0..d {
                for c in 0..d {
                    let s: f64 = (0..d).map(|k| metric.g[r][k] * metric.ginv[k][c]).sum();
                    let delta = if r == c { 1.0 } else { 0.0 };
                    w[4] = w[4].max((s - delta).abs());
                }
            }
            w
        })
        .reduce(|| [0.0; 5], |a, b| std::array::from_fn(|k| a[k].max(b[k])));
    Ok(vec![
        CheckLine {
            name: "curvature_equivalence",
            value: check_pointwise_e1(field)?,
            tolerance: 1e-9,
        },
        CheckLine {
            name: "frame_orthonormal",
            value: worst[0],
            tolerance: 1e-10,
        },
        CheckLine {
            name: "frame_normal",
            value: worst[1],
            tolerance: 1e-10,
        },
        CheckLine {
            name: "complex_structure",
            value: worst[2],
            tolerance: 1e-10,
        },
        CheckLine {
            name: "mean_curvature_normal",
            value: worst[3],
            tolerance: 1e-9,
        },
        CheckLine {
            name: "metric_inverse",
            value: worst[4],
            tolerance: 1e-10,
        },
    ])
}

/// Where `check-geometry` takes its state from.
#[derive(Debug, Clone)]
pub enum GeometrySource {
    Config(Box<RunConfig>),
    Snapshot(PathBuf),
}

pub fn cmd_check_geometry(source: &GeometrySource, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let loaded = match source {
        GeometrySource::Config(c) => initial_state(c),
        GeometrySource::Snapshot(p) => read_snapshot(p).map(|(_, f)| f),
    };
    let field = match loaded {
        Ok(f) => f,
        Err(e) => return fail(err, &e),
    };
    if let Some(index) = field
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        let _ = writeln!(out, "FAIL finite index={index}");
        let _ = writeln!(err, "check failed: finite (non-finite sample at index {index})");
        return EXIT_CHECK;
    }
    let _ = writeln!(out, "PASS finite");
    let lines = match geometry_checks(&field) {
        Ok(l) => l,
        Err(e) => {
            let _ = writeln!(err, "check failed: geometry ({e})");
            return EXIT_CHECK;
        }
    };
    let mut failed = Vec::new();
    for l in &lines {
        let verdict = if l.pass() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict} {} value={:e} tol={:e}", l.name, l.value, l.tolerance);
        if !l.pass() {
            failed.push(l.name);
        }
    }
    let sup_du = crate::integrator::coefficient_deviation(&field).1;
    if sup_du > 1.0 {
        let _ = writeln!(out, "NOTE sup_du={sup_du:e} exceeds 1; outside the small-data regime");
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        let _ = writeln!(err, "check failed: {}", failed.join(", "));
        EXIT_CHECK
    }
}

/// Required fitted order for an oracle comparison to pass.
pub const ORACLE_MIN_ORDER: f64 = 3.5;

/// Compares every geometry quantity on the configured initial state at
/// resolutions `n/4`, `n/2`, `n` against the finite-difference oracle.
pub fn cmd_oracle_compare(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let g = config.grid;
    let sizes = [g.n() / 4, g.n() / 2, g.n()];
    if sizes[0] < 16 {
        let _ = writeln!(err, "error: oracle-compare needs grid.n >= 64, got {}", g.n());
        return EXIT_CONFIG;
    }
    let make = |n: usize| {
        let spec = GridSpec::new(g.d(), n, g.length())?;
        let field = initial_state_on(config, spec)?;
        let oracle = fd_geometry(&field)?;
        Ok((field, oracle))
    };
    let mut failed = Vec::new();
    for q in Quantity::ALL {
        match compare(q, &sizes, make) {
            Ok(mut report) => {
                report.pass = report.order.is_none_or(|o| o >= ORACLE_MIN_ORDER);
                let _ = writeln!(out, "{report}");
                if !report.pass {
                    failed.push(q.name());
                }
            }
            Err(e) => return fail(err, &e),
        }
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        let _ = writeln!(err, "check failed: {}", failed.join(", "));
        EXIT_CHECK
    }
}
