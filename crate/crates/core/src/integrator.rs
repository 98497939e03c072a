//! Integrating-factor RK4 time stepping, step-size control and the run loop.
//!
//! The linear part `(i + λ)Δφ` is integrated exactly through the factor
//! `E(h) = e^{−(i+λ)|ξ|² h}`; classical RK4 is applied to the pulled-back
//! remainder (Lawson's scheme).

use num_complex::Complex64;
use rayon::prelude::*;

use crate::diagnostics::{record, DiagnosticsRecord, ParameterPlan};
use crate::dynamics::{remainder_spectral, RhsMode};
use crate::error::{Error, Result};
use crate::geometry::point_frame;
use crate::grid::{Field, SpectralField};

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Running,
    Finished,
    BlownUp { quantity: String, value: f64 },
    Error(String),
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Finished => "finished",
            Status::BlownUp { .. } => "blown_up",
            Status::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub phi: Field,
    pub step_count: u64,
    pub dt: f64,
    pub status: Status,
}

impl SolverState {
    pub fn new(phi: Field, dt: f64) -> Self {
        SolverState {
            t: 0.0,
            phi,
            step_count: 0,
            dt,
            status: Status::Running,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub dt_init: f64,
    pub cfl_safety: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Bound on `‖Du‖_∞`.
    pub blowup_grad_threshold: f64,
    /// Bound on `‖φ‖_∞`.
    pub blowup_value_threshold: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 0.01,
            cfl_safety: 0.5,
            dt_min: 1e-6,
            dt_max: 0.05,
            blowup_grad_threshold: 1.0,
            blowup_value_threshold: 1e3,
        }
    }
}

impl StepControl {
    /// Constant step `dt`: `dt_min = dt_init = dt_max`.
    pub fn fixed(dt: f64) -> Self {
        StepControl {
            dt_init: dt,
            dt_min: dt,
            dt_max: dt,
            cfl_safety: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.dt_min)
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && positive(self.dt_max))
        {
            return Err(Error::InvalidArgument(format!(
                "step sizes must satisfy 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.blowup_grad_threshold > 0.0 && self.blowup_value_threshold > 0.0) {
            return Err(Error::InvalidArgument("blow-up thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// `e^{−z|ξ|² h}` for every mode.
fn factor(spec: &crate::grid::GridSpec, z: Complex64, h: f64) -> Vec<Complex64> {
    (0..spec.len())
        .into_par_iter()
        .map(|i| (-z * spec.xi_norm_sq(i) * h).exp())
        .collect()
}

fn combine(spectral: &SpectralField, f: impl Fn(usize, Complex64) -> Complex64 + Sync) -> SpectralField {
    let mut out = spectral.clone();
    out.coeffs_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, c)| *c = f(i, *c));
    out
}

/// One Lawson RK4 step of size `h` in Fourier space.
fn lawson_rk4(phi: &SpectralField, h: f64, mode: &RhsMode) -> Result<SpectralField> {
    let spec = *phi.spec();
    let z = mode.linear_symbol();
    let e_half = factor(&spec, z, 0.5 * h);
    let e_full = factor(&spec, z, h);
    let p = phi.coeffs();

    let n0 = remainder_spectral(phi, mode)?;
    let k0 = n0.coeffs();
    let a = combine(phi, |i, c| e_half[i] * (c + 0.5 * h * k0[i]));
    let na = remainder_spectral(&a, mode)?;
    let ka = na.coeffs();
    let b = combine(phi, |i, c| e_half[i] * c + 0.5 * h * ka[i]);
    let nb = remainder_spectral(&b, mode)?;
    let kb = nb.coeffs();
    let c = combine(phi, |i, c| e_full[i] * c + h * e_half[i] * kb[i]);
    let nc = remainder_spectral(&c, mode)?;
    let kc = nc.coeffs();
    Ok(combine(phi, |i, _| {
        e_full[i] * p[i] + h / 6.0 * (e_full[i] * k0[i] + 2.0 * e_half[i] * (ka[i] + kb[i]) + kc[i])
    }))
}

/// `(max_x |(1/√det g) g^{ij} − δ_ij|, ‖Du‖_∞)`, the first measured in the
/// Frobenius norm.
pub fn coefficient_deviation(field: &Field) -> (f64, f64) {
    crate::geometry::gradient_jets(field)
        .par_iter()
        .map(|j| {
            let m = crate::geometry::point_metric(j);
            let s = (1.0 + (0..j.d).map(|i| j.du[0][i].powi(2)).sum::<f64>()).sqrt();
            let coef = 1.0 / (point_frame(j).lambda * s);
            let mut dev = 0.0;
            for a in 0..j.d {
                for b in 0..j.d {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    dev += (coef * m.ginv[a][b] - delta).powi(2);
                }
            }
            (dev.sqrt(), j.grad_norm_sq().sqrt())
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)))
}

fn threshold_breach(phi: &Field, control: &StepControl) -> Option<Status> {
    if let Some(i) = phi
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Some(Status::BlownUp {
            quantity: format!("non-finite value at grid point {i}"),
            value: f64::NAN,
        });
    }
    let linf = phi.max_abs();
    if linf > control.blowup_value_threshold {
        return Some(Status::BlownUp {
            quantity: "linf".into(),
            value: linf,
        });
    }
    let (_, sup_du) = coefficient_deviation(phi);
    if sup_du > control.blowup_grad_threshold {
        return Some(Status::BlownUp {
            quantity: "sup_du".into(),
            value: sup_du,
        });
    }
    None
}

fn advance(state: &SolverState, h: f64, control: &StepControl, mode: &RhsMode) -> Result<SolverState> {
    if state.status != Status::Running {
        return Err(Error::InvalidArgument(format!(
            "cannot step a solver whose status is {}",
            state.status.name()
        )));
    }
    let mut next = state.clone();
    next.t = state.t + h;
    next.step_count += 1;
    match lawson_rk4(&state.phi.to_spectral(), h, mode) {
        Ok(s) => {
            next.phi = s.to_field();
            if let Some(status) = threshold_breach(&next.phi, control) {
                next.status = status;
            }
        }
        Err(Error::NonFinite { what, index }) => {
            next.status = Status::BlownUp {
                quantity: format!("non-finite {what} at grid point {index}"),
                value: f64::NAN,
            };
        }
        Err(e) => return Err(e),
    }
    Ok(next)
}

/// One integrating-factor RK4 step of size `state.dt`.
pub fn step(state: &SolverState, control: &StepControl, mode: &RhsMode) -> Result<SolverState> {
    advance(state, state.dt, control, mode)
}

/// Next step size `cfl / (1 + dev·ξ_max²)`, clamped to `[dt_min, dt_max]`
/// and to at most twice the current step.
pub fn adapt_dt(state: &SolverState, control: &StepControl) -> Result<f64> {
    let (dev, _) = coefficient_deviation(&state.phi);
    let xi = state.phi.spec().xi_max();
    dt_from_deviation(dev, xi, state.dt, control)
}

pub(crate) fn dt_from_deviation(dev: f64, xi_max: f64, current: f64, control: &StepControl) -> Result<f64> {
    let raw = control.cfl_safety / (1.0 + dev * xi_max * xi_max);
    if raw < control.dt_min {
        return Err(Error::InvalidArgument(format!(
            "stable step {raw:e} fell below dt_min = {:e}",
            control.dt_min
        )));
    }
    Ok(raw.min(control.dt_max).min(2.0 * current).max(control.dt_min))
}

/// Receives the outputs of [`run`] as they are produced.
pub trait RunObserver {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()>;

    fn on_snapshot(&mut self, _t: f64, _phi: &Field) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<(f64, Field)>,
}

impl RunObserver for Recorder {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.records.push(*record);
        Ok(())
    }

    fn on_snapshot(&mut self, t: f64, phi: &Field) -> Result<()> {
        self.snapshots.push((t, phi.clone()));
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub initial: Field,
    pub mode: RhsMode,
    pub control: StepControl,
    pub t_end: f64,
    pub sample_dt: f64,
    pub snapshot_times: Vec<f64>,
    pub plan: ParameterPlan,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample_dt must be > 0, got {}",
                self.sample_dt
            )));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_end)) {
            return Err(Error::InvalidArgument(format!(
                "snapshot time {t} lies outside [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }
}

/// Advances from `t = 0` to `t_end`, reporting a record at `t = 0`, at every
/// multiple of `sample_dt` and at `t_end`, and snapshots at the requested
/// times. Steps are shortened to land on these times exactly.
pub fn run(spec: &RunSpec, observer: &mut dyn RunObserver) -> Result<SolverState> {
    spec.validate()?;
    let control = &spec.control;
    let tol = 1e-12 * spec.t_end.max(1.0);
    let mut snapshots: Vec<f64> = spec.snapshot_times.clone();
    snapshots.sort_by(f64::total_cmp);
    snapshots.dedup();
    let mut next_snapshot = 0;

    let mut state = SolverState::new(spec.initial.clone(), control.dt_init);
    observer.on_record(&record(&state.phi, 0.0, &spec.plan)?)?;
    while next_snapshot < snapshots.len() && snapshots[next_snapshot] <= tol {
        observer.on_snapshot(0.0, &state.phi)?;
        next_snapshot += 1;
    }
    if let Some(status) = threshold_breach(&state.phi, control) {
        state.status = status;
        return Ok(state);
    }

    let mut sample_index: u64 = 1;
    while state.t < spec.t_end - tol {
        let dt = match adapt_dt(&state, control) {
            Ok(dt) => dt,
            Err(e) => {
                state.status = Status::Error(e.to_string());
                return Ok(state);
            }
        };
        state.dt = dt;
        let next_sample = (sample_index as f64 * spec.sample_dt).min(spec.t_end);
        let mut target = next_sample;
        if let Some(&s) = snapshots.get(next_snapshot) {
            target = target.min(s);
        }
        let landing = state.t + dt >= target - tol;
        let h = if landing { target - state.t } else { dt };
        let mut next = advance(&state, h, control, &spec.mode)?;
        next.dt = dt;
        if landing {
            next.t = target;
        }
        state = next;
        if state.status != Status::Running {
            return Ok(state);
        }
        if (state.t - next_sample).abs() <= tol {
            observer.on_record(&record(&state.phi, state.t, &spec.plan)?)?;
            sample_index += 1;
        }
        while next_snapshot < snapshots.len() && (snapshots[next_snapshot] - state.t).abs() <= tol {
            observer.on_snapshot(state.t, &state.phi)?;
            next_snapshot += 1;
        }
    }
    state.status = Status::Finished;
    Ok(state)
}
