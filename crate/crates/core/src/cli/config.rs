//! TOML run configuration.
//!
//! ```toml
//! [grid]                 # required
//! d = 2
//! n = 256
//! length = 64.0
//!
//! [init]                 # defaults shown
//! kind = "gaussian_packet"
//! amplitude = 0.01
//! width = 1.0
//! modulation = 0.0
//! seed = 0
//!
//! [solver]
//! mode = "exact_system"
//! lambda = 0.0
//! dt_init = 0.01
//! dt_min = 1e-6
//! dt_max = 0.05
//! cfl_safety = 0.5
//! t_end = 10.0
//! blowup_grad = 1.0
//! blowup_value = 1000.0
//!
//! [diagnostics]
//! sample_dt = 0.1
//! snapshot_times = []
//! delta = 0.05
//!
//! [output]
//! dir = "out"
//! series_name = "series.csv"
//! snapshot_prefix = "snap"
//! ```
//!
//! The environment variable `SMCF_OUTPUT_DIR` overrides `output.dir`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::diagnostics::{parameter_plan, ParameterPlan, DEFAULT_DELTA};
use crate::dynamics::{InitKind, RhsKind, RhsMode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::integrator::StepControl;

pub const OUTPUT_DIR_ENV: &str = "SMCF_OUTPUT_DIR";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: RawGrid,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    d: i64,
    n: i64,
    length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawInit {
    kind: String,
    amplitude: f64,
    width: f64,
    modulation: f64,
    seed: u64,
}

impl Default for RawInit {
    fn default() -> Self {
        RawInit {
            kind: "gaussian_packet".into(),
            amplitude: 0.01,
            width: 1.0,
            modulation: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    mode: String,
    lambda: f64,
    dt_init: f64,
    dt_min: f64,
    dt_max: f64,
    cfl_safety: f64,
    t_end: f64,
    blowup_grad: f64,
    blowup_value: f64,
}

impl Default for RawSolver {
    fn default() -> Self {
        let c = StepControl::default();
        RawSolver {
            mode: RhsKind::ExactSystem.name().into(),
            lambda: 0.0,
            dt_init: c.dt_init,
            dt_min: c.dt_min,
            dt_max: c.dt_max,
            cfl_safety: c.cfl_safety,
            t_end: 10.0,
            blowup_grad: c.blowup_grad_threshold,
            blowup_value: c.blowup_value_threshold,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDiagnostics {
    sample_dt: f64,
    snapshot_times: Vec<f64>,
    delta: f64,
}

impl Default for RawDiagnostics {
    fn default() -> Self {
        RawDiagnostics {
            sample_dt: 0.1,
            snapshot_times: Vec::new(),
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    dir: PathBuf,
    series_name: String,
    snapshot_prefix: String,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            dir: PathBuf::from("out"),
            series_name: "series.csv".into(),
            snapshot_prefix: "snap".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub kind: InitKind,
    pub amplitude: f64,
    pub width: f64,
    pub modulation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: RhsMode,
    pub control: StepControl,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub sample_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub plan: ParameterPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub series_name: String,
    pub snapshot_prefix: String,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub init: InitConfig,
    pub solver: SolverConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// `output.dir`, unless `SMCF_OUTPUT_DIR` is set.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message()))
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        // toml reports the offending table through the span; the message
        // already names the field for unknown or missing keys.
        Error::config(table_of(text, e.span()), message)
    })?;

    let g = &raw.grid;
    check((2..=3).contains(&g.d), "grid.d", || {
        format!("expected 2 or 3, got {}", g.d)
    })?;
    check(g.n >= 8 && (g.n as u64).is_power_of_two(), "grid.n", || {
        format!("expected a power of two >= 8, got {}", g.n)
    })?;
    check(g.length > 0.0 && g.length.is_finite(), "grid.length", || {
        format!("expected a positive length, got {}", g.length)
    })?;
    let grid = GridSpec::new(g.d as usize, g.n as usize, g.length).map_err(|e| Error::config("grid", e.to_string()))?;

    let i = &raw.init;
    let kind: InitKind = i
        .kind
        .parse()
        .map_err(|e: Error| Error::config("init.kind", e.to_string()))?;
    check(i.amplitude >= 0.0 && i.amplitude.is_finite(), "init.amplitude", || {
        format!("expected a finite value >= 0, got {}", i.amplitude)
    })?;
    check(i.width > 0.0 && i.width.is_finite(), "init.width", || {
        format!("expected a positive width, got {}", i.width)
    })?;
    check(i.modulation.is_finite(), "init.modulation", || {
        format!("expected a finite value, got {}", i.modulation)
    })?;

    let s = &raw.solver;
    let mode_kind: RhsKind = s
        .mode
        .parse()
        .map_err(|e: Error| Error::config("solver.mode", e.to_string()))?;
    let mode = RhsMode::new(mode_kind, s.lambda).map_err(|e| Error::config("solver.lambda", e.to_string()))?;
    check(s.t_end >= 0.0 && s.t_end.is_finite(), "solver.t_end", || {
        format!("expected a finite value >= 0, got {}", s.t_end)
    })?;
    check(s.dt_min > 0.0 && s.dt_min.is_finite(), "solver.dt_min", || {
        format!("expected a positive value, got {}", s.dt_min)
    })?;
    check(s.dt_init >= s.dt_min, "solver.dt_init", || {
        format!("expected dt_min <= dt_init, got {} < {}", s.dt_init, s.dt_min)
    })?;
    check(s.dt_max >= s.dt_init && s.dt_max.is_finite(), "solver.dt_max", || {
        format!("expected dt_init <= dt_max, got {} < {}", s.dt_max, s.dt_init)
    })?;
    check(s.cfl_safety > 0.0 && s.cfl_safety <= 1.0, "solver.cfl_safety", || {
        format!("expected a value in (0, 1], got {}", s.cfl_safety)
    })?;
    check(s.blowup_grad > 0.0, "solver.blowup_grad", || {
        format!("expected a positive threshold, got {}", s.blowup_grad)
    })?;
    check(s.blowup_value > 0.0, "solver.blowup_value", || {
        format!("expected a positive threshold, got {}", s.blowup_value)
    })?;

    let dg = &raw.diagnostics;
    check(
        dg.sample_dt > 0.0 && dg.sample_dt.is_finite(),
        "diagnostics.sample_dt",
        || format!("expected a positive value, got {}", dg.sample_dt),
    )?;
    if let Some(t) = dg.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= s.t_end)) {
        return Err(Error::config(
            "diagnostics.snapshot_times",
            format!("time {t} lies outside [0, solver.t_end = {}]", s.t_end),
        ));
    }
    let plan = parameter_plan(grid.d(), dg.delta).map_err(|e| Error::config("diagnostics.delta", e.to_string()))?;

    let o = &raw.output;
    check(!o.series_name.is_empty(), "output.series_name", || {
        "must not be empty".into()
    })?;
    check(!o.snapshot_prefix.is_empty(), "output.snapshot_prefix", || {
        "must not be empty".into()
    })?;

    Ok(RunConfig {
        grid,
        init: InitConfig {
            kind,
            amplitude: i.amplitude,
            width: i.width,
            modulation: i.modulation,
            seed: i.seed,
        },
        solver: SolverConfig {
            mode,
            control: StepControl {
                dt_init: s.dt_init,
                cfl_safety: s.cfl_safety,
                dt_min: s.dt_min,
                dt_max: s.dt_max,
                blowup_grad_threshold: s.blowup_grad,
                blowup_value_threshold: s.blowup_value,
            },
            t_end: s.t_end,
        },
        diagnostics: DiagnosticsConfig {
            sample_dt: dg.sample_dt,
            snapshot_times: dg.snapshot_times.clone(),
            plan,
        },
        output: OutputConfig {
            dir: o.dir.clone(),
            series_name: o.series_name.clone(),
            snapshot_prefix: o.snapshot_prefix.clone(),
        },
    })
}

/// Name of the `[table]` enclosing byte offset `span.start`, or `<root>`.
fn table_of(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    let Some(span) = span else {
        return "<root>".into();
    };
    let before = &text[..span.start.min(text.len())];
    before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        .unwrap_or_else(|| "<root>".into())
}
